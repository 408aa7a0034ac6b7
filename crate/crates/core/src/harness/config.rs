use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{parse_library, PlanLibrary};
use crate::fuzzy::RuleBase;
use crate::lifting::{with_double_check, ApprovalPolicy, WorkflowConfig};
use crate::mediation::{Constraints, ReservoirData};
use crate::org::{load_scheme, GoalScheme};
use crate::plant::{Injection, Plant, PlantParams, PlantState};
use crate::sfc::{load_chart, SfcChart};
use crate::shipped;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{what} ({path}): {message}")]
    Document { what: &'static str, path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ExchangerAgent,
    ExchangerSfc,
    ExchangerCompare,
    Lifting,
}

/// Document paths, relative to the config file. Missing entries fall back
/// to the bundled scenario documents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Documents {
    pub agent: Option<PathBuf>,
    pub chart: Option<PathBuf>,
    pub rulebase: Option<PathBuf>,
    pub scheme: Option<PathBuf>,
    /// Directory holding `<role>.asl` for every scheme role.
    pub agents_dir: Option<PathBuf>,
    pub reservoir: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproverKind {
    #[default]
    Scripted,
    Random,
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftingSection {
    pub approver: ApproverKind,
    /// Used by the random approver.
    pub contest_probability: f64,
    pub max_rounds: u32,
    pub max_ticks: u64,
    pub reminder_after: Option<u64>,
    pub abort_after: Option<u64>,
    pub report_attempts: u32,
    /// The stub agency fails this many calls before it issues a receipt.
    pub agency_faults: u32,
    /// Adds the extra engineer check to the scheme after loading.
    pub double_check: bool,
    /// Artifacts reached over HTTP instead of in process, by name.
    pub endpoints: BTreeMap<String, String>,
}

impl Default for LiftingSection {
    fn default() -> Self {
        let w = WorkflowConfig::default();
        Self {
            approver: ApproverKind::Scripted,
            contest_probability: 0.3,
            max_rounds: w.max_rounds,
            max_ticks: w.max_ticks,
            reminder_after: None,
            abort_after: None,
            report_attempts: w.report_attempts,
            agency_faults: 0,
            double_check: false,
            endpoints: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Simulated seconds (exchanger modes).
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Overrides the chart's own polling period when set.
    #[serde(default)]
    pub polling_period: Option<f64>,
    /// Initial temperature; defaults to the setpoint.
    #[serde(default)]
    pub initial_temperature: Option<f64>,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub injections: Vec<Injection>,
    #[serde(default)]
    pub documents: Documents,
    #[serde(default)]
    pub lifting: LiftingSection,
}

fn default_duration() -> f64 {
    600.0
}

/// Everything the exchanger runners need, validated.
#[derive(Debug, Clone)]
pub struct ExchangerSetup {
    pub params: PlantParams,
    pub initial_temperature: f64,
    pub injections: Vec<Injection>,
    pub duration: f64,
    pub library: PlanLibrary,
    pub chart: SfcChart,
    pub rulebase: RuleBase,
    /// Stabiliser period in seconds.
    pub control_period: f64,
}

impl ExchangerSetup {
    /// The bundled documents with default plant parameters.
    pub fn shipped() -> Self {
        let params = PlantParams::default();
        Self {
            initial_temperature: params.t_setpoint,
            params,
            injections: vec![],
            duration: default_duration(),
            library: shipped::exchanger_agent(),
            chart: shipped::exchanger_chart(),
            rulebase: shipped::stabiliser_rules(),
            control_period: 1.0,
        }
    }

    pub fn ticks(&self) -> u64 {
        self.params.ticks(self.duration)
    }
}

#[derive(Debug, Clone)]
pub struct LiftingSetup {
    pub scheme: GoalScheme,
    pub agents: Vec<(String, PlanLibrary)>,
    pub reservoir: ReservoirData,
    pub policy: ApprovalPolicy,
    pub workflow: WorkflowConfig,
    pub settings: LiftingSection,
}

impl LiftingSetup {
    pub fn shipped(policy: &str) -> Option<Self> {
        Some(Self {
            scheme: shipped::lifting_scheme(),
            agents: shipped::lifting_agents(),
            reservoir: shipped::reservoir(),
            policy: shipped::policy(policy)?,
            workflow: WorkflowConfig::default(),
            settings: LiftingSection::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Setup {
    Exchanger(ExchangerSetup),
    Lifting(LiftingSetup),
}

/// A config with every referenced document loaded and validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub setup: Setup,
}

fn read_doc(base: &Path, p: &Path) -> Result<String, ConfigError> {
    let path = base.join(p);
    fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })
}

fn doc_err(what: &'static str, path: &Option<PathBuf>, message: impl ToString) -> ConfigError {
    ConfigError::Document {
        what,
        path: path.as_ref().map_or("bundled".into(), |p| p.display().to_string()),
        message: message.to_string(),
    }
}

/// Source text of an optional document, or the bundled fallback.
fn text(base: &Path, p: &Option<PathBuf>, fallback: &str) -> Result<String, ConfigError> {
    match p {
        Some(p) => read_doc(base, p),
        None => Ok(fallback.to_string()),
    }
}

impl ScenarioConfig {
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(src)?)
    }

    /// Loads and validates every referenced document. Paths resolve
    /// against `base`, normally the directory of the config file.
    pub fn resolve(self, base: &Path) -> Result<Scenario, ConfigError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(ConfigError::Invalid("duration must be positive".into()));
        }
        let setup = match self.mode {
            Mode::Lifting => Setup::Lifting(self.lifting_setup(base)?),
            _ => Setup::Exchanger(self.exchanger_setup(base)?),
        };
        Ok(Scenario { config: self, setup })
    }

    fn exchanger_setup(&self, base: &Path) -> Result<ExchangerSetup, ConfigError> {
        let d = &self.documents;
        self.plant.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let library = parse_library(&text(base, &d.agent, shipped::EXCHANGER_AGENT)?)
            .map_err(|e| doc_err("agent plan library", &d.agent, e))?;
        let mut chart = load_chart(&text(base, &d.chart, shipped::EXCHANGER_CHART)?)
            .map_err(|e| doc_err("chart", &d.chart, e))?;
        if let Some(p) = self.polling_period {
            if !(p.is_finite() && p > 0.0) {
                return Err(ConfigError::Invalid("polling_period must be positive".into()));
            }
            chart.polling_period = p;
        }
        let rulebase = RuleBase::from_toml(&text(base, &d.rulebase, shipped::STABILISER_RULES)?)
            .map_err(|e| doc_err("rulebase", &d.rulebase, e))?;
        let t0 = self.initial_temperature.unwrap_or(self.plant.t_setpoint);
        let mut probe = Plant::new(self.plant.clone(), PlantState::steady(&self.plant, t0))
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for inj in &self.injections {
            probe.inject(*inj).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(ExchangerSetup {
            params: self.plant.clone(),
            initial_temperature: t0,
            injections: self.injections.clone(),
            duration: self.duration,
            library,
            chart,
            rulebase,
            control_period: 1.0,
        })
    }

    fn lifting_setup(&self, base: &Path) -> Result<LiftingSetup, ConfigError> {
        let d = &self.documents;
        let mut scheme = load_scheme(&text(base, &d.scheme, shipped::LIFTING_SCHEME)?)
            .map_err(|e| doc_err("scheme", &d.scheme, e))?;
        if self.lifting.double_check {
            scheme = with_double_check(&scheme).map_err(|e| doc_err("scheme", &d.scheme, e))?;
        }
        let mut agents = vec![];
        for role in &scheme.roles {
            let src = match &d.agents_dir {
                Some(dir) => read_doc(base, &dir.join(format!("{role}.asl")))?,
                None => shipped::LIFTING_AGENTS
                    .iter()
                    .find(|(n, _)| n == role)
                    .map(|(_, s)| s.to_string())
                    .ok_or_else(|| ConfigError::Invalid(format!("no bundled agent for role `{role}`")))?,
            };
            let lib = parse_library(&src).map_err(|e| doc_err("agent plan library", &d.agents_dir, e))?;
            agents.push((role.clone(), lib));
        }
        let reservoir: ReservoirData = serde_json::from_str(&text(base, &d.reservoir, shipped::RESERVOIR)?)
            .map_err(|e| doc_err("reservoir data", &d.reservoir, e))?;
        let policy_src = match &d.policy {
            Some(p) => read_doc(base, p)?,
            None => shipped::POLICIES[0].1.to_string(),
        };
        let policy = ApprovalPolicy::from_toml(&policy_src).map_err(|e| doc_err("approval policy", &d.policy, e))?;
        let constraints: Constraints = toml::from_str(&text(base, &d.constraints, shipped::CONSTRAINTS)?)
            .map_err(|e| doc_err("constraints", &d.constraints, e))?;
        for (k, [lo, hi]) in &constraints {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(doc_err("constraints", &d.constraints, format!("bad box for `{k}`")));
            }
        }
        let l = &self.lifting;
        if !(0.0..=1.0).contains(&l.contest_probability) {
            return Err(ConfigError::Invalid("contest_probability must lie in [0, 1]".into()));
        }
        let workflow = WorkflowConfig {
            max_rounds: l.max_rounds,
            constraints,
            max_ticks: l.max_ticks,
            reminder_after: l.reminder_after,
            abort_after: l.abort_after,
            report_attempts: l.report_attempts,
        };
        if workflow.max_rounds == 0 {
            return Err(ConfigError::Invalid("max_rounds must be at least 1".into()));
        }
        Ok(LiftingSetup {
            scheme,
            agents,
            reservoir,
            policy,
            workflow,
            settings: l.clone(),
        })
    }
}

/// Reads a config file and resolves it against its own directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let src = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    ScenarioConfig::from_toml(&src)?.resolve(base)
}
