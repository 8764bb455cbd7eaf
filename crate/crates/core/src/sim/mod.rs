//! Scenario files, the deterministic multi-device simulator, traces, metrics
//! and the stage-machine model checker.

pub mod channel;
pub mod engine;
pub mod kinematics;
pub mod metrics;
pub mod model_check;
pub mod scenario;
pub mod trace;

pub use engine::{check_expectations, run, run_with, RunOutcome, RunOverrides};
pub use metrics::{metrics, Metrics, MetricsError};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
pub use trace::{Trace, TraceRecord};
