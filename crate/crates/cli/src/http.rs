use std::time::Duration;

use agentplant_core::mediation::{HttpTransport, TransportError};
use serde_json::Value;

/// Blocking JSON POSTs for artifacts reached over HTTP.
#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<(u16, Value), TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent.post(url).send_json(body).map_err(map_err)?;
        let status = resp.status().as_u16();
        let body: Value = resp.body_mut().read_json().unwrap_or(Value::Null);
        Ok((status, body))
    }
}

fn map_err(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Io(other.to_string()),
    }
}
