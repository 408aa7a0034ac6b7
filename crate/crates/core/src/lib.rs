//! Agent and classical control runtimes for a heat-exchanger protection case
//! and an organisational artificial-lifting workflow.

pub mod agent;
pub mod fuzzy;
pub mod harness;
pub mod lifting;
pub mod mediation;
pub mod org;
pub mod plant;
pub mod sfc;
pub mod shipped;
pub mod syntax;
pub mod term;
pub mod trace;
