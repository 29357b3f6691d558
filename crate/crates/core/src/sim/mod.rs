//! Discrete-event node simulator: scenario files, the event loop binding
//! strategy, MAC, ADR and the power model, and the run report.

mod engine;
mod report;
mod scenario;

pub use engine::{run, run_with_seed};
pub use report::{EventLog, SimReport};
pub use scenario::{
    AckModel, AdrSection, BatteryConfig, EventLogConfig, EventLogMode, RadioConfig, Scenario,
    SnrModel, UplinkConfig, SCENARIO_SCHEMA_VERSION,
};

/// Seconds until an ideal battery of `capacity_mah` is empty at a constant
/// `average_current_a`.
pub fn battery_lifetime(capacity_mah: f64, average_current_a: f64) -> f64 {
    capacity_mah * 3.6 / average_current_a
}
