//! Scenario files, task orchestration and certification reports for the
//! `ptone` command-line tool.

pub mod report;
pub mod runner;
pub mod scenario;

pub use report::{CertificationReport, Status, TaskRecord, Verdict};
pub use runner::run;
pub use scenario::{parse_scenario, parse_scenario_str, Format, Scenario, ScenarioError};
