//! Scenario runner for the 3D-stack model: TOML scenario documents, a
//! managed transient loop, reports, exports and comparisons.

pub mod compare;
pub mod config;
pub mod error;
pub mod export;
pub mod policy;
pub mod scenario;

pub use compare::{compare_scenarios, Comparison, ComparisonRow};
pub use config::{schema_json, ScenarioConfig};
pub use error::{ErrorKind, HarnessError, Stage};
pub use export::{export, Format};
pub use policy::{replay, Action, Controller, DtmPolicy, PolicyEvent, PolicySample, TileRef};
pub use scenario::{run_scenario, run_scenario_with, RunPlan, ScenarioReport, ScenarioRun};

/// Worker cap from `STACKEMU_THREADS`; `None` when unset, empty or 0.
pub fn threads_from_env() -> Result<Option<usize>, HarnessError> {
    match std::env::var("STACKEMU_THREADS") {
        Err(_) => Ok(None),
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(HarnessError::config(format!(
                "STACKEMU_THREADS must be a non-negative integer, got '{v}'"
            ))),
        },
    }
}
