//! Library side of the `agentplant` binary: the HTTP artifact transport and
//! the approval service.

pub mod http;
pub mod serve;
