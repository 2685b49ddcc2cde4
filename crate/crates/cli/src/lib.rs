//! Scenario-driven simulation harness: a line-oriented scenario language,
//! a deterministic runner over the protocol stack, and report assembly.

pub mod runner;
pub mod scenario;

pub use runner::{run_scenario, run_scenario_with_trace, Overrides, RunReport, RunStatus};
pub use scenario::{parse_scenario, Directive, ParseError, Scenario};
