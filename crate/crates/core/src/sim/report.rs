use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::scenario::Scenario;
use super::{battery_lifetime, SCENARIO_SCHEMA_VERSION};
use crate::adr::LinkSettings;
use crate::energy::{EnergyLedger, PowerState, Segment};
use crate::error::Result;

/// Bounded record of state intervals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    rows: Vec<Segment>,
    max_rows: usize,
    truncated: bool,
}

impl EventLog {
    pub fn new(max_rows: usize) -> Self {
        EventLog {
            rows: Vec::new(),
            max_rows,
            truncated: false,
        }
    }

    pub fn push(&mut self, seg: Segment) {
        if self.rows.len() < self.max_rows {
            self.rows.push(seg);
        } else {
            self.truncated = true;
        }
    }

    pub fn rows(&self) -> &[Segment] {
        &self.rows
    }

    /// True when rows were dropped because the cap was reached.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub const HEADER: [&'static str; 5] = ["t_us", "state", "duration_us", "energy_nJ", "detail"];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for s in &self.rows {
            w.write_record([
                s.start_us.to_string(),
                s.state.to_string(),
                s.duration_us.to_string(),
                format!("{:.3}", s.energy_j * 1e9),
                s.detail.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub scenario: String,
    pub seed: Option<u64>,
    pub simulated_time_us: i64,
    pub battery_depleted: bool,
    /// Time of depletion, when the run got that far.
    pub lifetime_s: Option<f64>,
    /// Capacity divided by the observed average drain.
    pub projected_lifetime_s: f64,
    /// Node draw averaged over the run, excluding self-discharge.
    pub average_current_a: f64,
    /// Node draw plus self-discharge.
    pub battery_drain_a: f64,
    pub battery_used_c: f64,
    pub supply_voltage: f64,
    pub samples: u64,
    pub relevant_samples: u64,
    pub uplinks: u64,
    pub transmissions: u64,
    pub retransmissions: u64,
    pub delivered: u64,
    pub delivered_samples: u64,
    /// Confirmed uplinks given up after the last retry.
    pub failed: u64,
    /// Unconfirmed uplinks no gateway heard.
    pub lost: u64,
    /// Uplinks still waiting when the run ended.
    pub queued_uplinks: u64,
    pub profile_derived_rx: u64,
    pub adr_decisions: u64,
    pub adr_changes: u64,
    pub adr_backoffs: u64,
    pub final_link: LinkSettings,
    pub ledger: EnergyLedger,
    pub state_time_us: BTreeMap<PowerState, i64>,
    pub event_log_rows: usize,
    pub event_log_truncated: bool,
    #[serde(skip)]
    pub event_log: EventLog,
}

impl SimReport {
    pub(crate) fn empty(sc: &Scenario, link: LinkSettings) -> Self {
        SimReport {
            schema_version: SCENARIO_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: sc.name.clone(),
            seed: sc.seed,
            simulated_time_us: 0,
            battery_depleted: false,
            lifetime_s: None,
            projected_lifetime_s: 0.0,
            average_current_a: 0.0,
            battery_drain_a: 0.0,
            battery_used_c: 0.0,
            supply_voltage: sc.profile.supply_voltage,
            samples: 0,
            relevant_samples: 0,
            uplinks: 0,
            transmissions: 0,
            retransmissions: 0,
            delivered: 0,
            delivered_samples: 0,
            failed: 0,
            lost: 0,
            queued_uplinks: 0,
            profile_derived_rx: 0,
            adr_decisions: 0,
            adr_changes: 0,
            adr_backoffs: 0,
            final_link: link,
            ledger: EnergyLedger::default(),
            state_time_us: BTreeMap::new(),
            event_log_rows: 0,
            event_log_truncated: false,
            event_log: EventLog::default(),
        }
    }

    pub(crate) fn finalize(&mut self, sc: &Scenario) {
        let secs = self.simulated_time_us as f64 * 1e-6;
        if secs > 0.0 {
            self.average_current_a = self.ledger.total() / (self.supply_voltage * secs);
        }
        self.battery_drain_a = self.average_current_a + sc.battery.self_discharge_a;
        self.projected_lifetime_s = if self.battery_drain_a > 0.0 {
            battery_lifetime(sc.battery.capacity_mah, self.battery_drain_a)
        } else {
            f64::INFINITY
        };
        if self.battery_depleted {
            self.lifetime_s = Some(secs);
        }
        self.event_log_rows = self.event_log.rows().len();
        self.event_log_truncated = self.event_log.truncated();
    }

    /// Depletion time if reached, otherwise the projection.
    pub fn lifetime_or_projection_s(&self) -> f64 {
        self.lifetime_s.unwrap_or(self.projected_lifetime_s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn one_line_summary(&self) -> String {
        format!(
            "{}: lifetime {:.1} days{}, average current {:.3} uA, {} uplinks ({} delivered), {} transmissions",
            if self.scenario.is_empty() { "scenario" } else { &self.scenario },
            self.lifetime_or_projection_s() / 86_400.0,
            if self.battery_depleted { "" } else { " (projected)" },
            self.average_current_a * 1e6,
            self.uplinks,
            self.delivered,
            self.transmissions,
        )
    }
}
