use serde::{Deserialize, Serialize};

use crate::adr::AdrConfig;
use crate::energy::{CalibrationFile, PowerProfile, RxWindowCalibration};
use crate::error::{from_json_str, ConfigIssue, Error, Result};
use crate::mac::{AckPlan, MacConfig};
use crate::phy::DataRate;
use crate::strategy::{AccumulationPolicy, RelevanceFilter, SensingMode, SignalModel};

/// Major version of the scenario document format.
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Declarative experiment description, read from a JSON scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    /// Free-text assumptions behind the numbers in this file.
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub run_to_battery_death: bool,
    #[serde(default)]
    pub battery: BatteryConfig,
    #[serde(default)]
    pub profile: PowerProfile,
    /// Inline calibration; the shipped table when absent.
    #[serde(default)]
    pub calibration: Option<CalibrationFile>,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default)]
    pub uplink: UplinkConfig,
    pub sensing: SensingMode,
    #[serde(default)]
    pub signal: SignalModel,
    #[serde(default)]
    pub processing_s_per_sample: f64,
    #[serde(default)]
    pub accumulation: AccumulationPolicy,
    #[serde(default)]
    pub filter: Option<RelevanceFilter>,
    #[serde(default)]
    pub adr: AdrSection,
    #[serde(default)]
    pub event_log: EventLogConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub capacity_mah: f64,
    pub voltage: f64,
    /// Constant drain that never reaches the node's ledger.
    pub self_discharge_a: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            capacity_mah: 1000.0,
            voltage: 3.6,
            self_discharge_a: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub dr: DataRate,
    pub tx_power_dbm: i8,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            dr: DataRate::DR5,
            tx_power_dbm: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UplinkConfig {
    pub confirmed: bool,
    pub ack: AckModel,
}

impl Default for UplinkConfig {
    fn default() -> Self {
        UplinkConfig {
            confirmed: false,
            ack: AckModel::Fixed { plan: AckPlan::Rx1 },
        }
    }
}

/// Network answer to confirmed uplinks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AckModel {
    Fixed {
        plan: AckPlan,
    },
    /// Independent draw per attempt; the remainder is "no ACK".
    Random {
        p_rx1: f64,
        p_rx2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SnrModel {
    /// Replayed in order, wrapping around.
    Trace {
        values: Vec<f64>,
    },
    Normal {
        mean_db: f64,
        sigma_db: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdrSection {
    pub enabled: bool,
    pub rule: AdrConfig,
    pub snr: Option<SnrModel>,
    pub gateway_count: u32,
}

impl Default for AdrSection {
    fn default() -> Self {
        AdrSection {
            enabled: false,
            rule: AdrConfig::default(),
            snr: None,
            gateway_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLogMode {
    /// Every state interval, sleep included.
    Full,
    /// Only the intervals belonging to uplink transactions.
    Transactions,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventLogConfig {
    pub mode: EventLogMode,
    pub max_rows: usize,
}

impl Default for EventLogConfig {
    fn default() -> Self {
        EventLogConfig {
            mode: EventLogMode::Full,
            max_rows: 100_000,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        from_json_str(text)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// True when any part of the run draws random numbers.
    pub fn is_stochastic(&self) -> bool {
        self.sensing.is_stochastic()
            || (self.uplink.confirmed && matches!(self.uplink.ack, AckModel::Random { .. }))
            || (self.adr.enabled && matches!(self.adr.snr, Some(SnrModel::Normal { .. })))
    }

    pub fn calibration(&self) -> Result<RxWindowCalibration> {
        match &self.calibration {
            Some(file) => RxWindowCalibration::from_file(file.clone()),
            None => Ok(RxWindowCalibration::shipped()),
        }
    }

    /// Collects every offending key, then checks the battery model.
    pub fn validate(&self) -> Result<RxWindowCalibration> {
        let mut issues = Vec::new();
        let mut push = |key: &str, msg: &str| issues.push(ConfigIssue::new(key, msg));

        if self.version != SCENARIO_SCHEMA_VERSION {
            push(
                "version",
                &format!("expected {SCENARIO_SCHEMA_VERSION}, got {}", self.version),
            );
        }
        match self.duration_s {
            Some(d) if !(d.is_finite() && d > 0.0) => push("duration_s", "must be positive"),
            None if !self.run_to_battery_death => {
                push("duration_s", "required unless run_to_battery_death is true")
            }
            _ => {}
        }
        let b = &self.battery;
        if !(b.capacity_mah.is_finite() && b.capacity_mah > 0.0) {
            push("battery.capacity_mah", "must be positive");
        }
        if !(b.voltage.is_finite() && b.voltage > 0.0) {
            push("battery.voltage", "must be positive");
        }
        if !(b.self_discharge_a.is_finite() && b.self_discharge_a >= 0.0) {
            push("battery.self_discharge_a", "must be non-negative");
        }
        if !(self.processing_s_per_sample.is_finite() && self.processing_s_per_sample >= 0.0) {
            push("processing_s_per_sample", "must be non-negative");
        }
        if self.is_stochastic() && self.seed.is_none() {
            push(
                "seed",
                "required because the scenario has stochastic elements",
            );
        }
        if let AckModel::Random { p_rx1, p_rx2 } = self.uplink.ack {
            if !(0.0..=1.0).contains(&p_rx1) || !(0.0..=1.0).contains(&p_rx2) || p_rx1 + p_rx2 > 1.0
            {
                push(
                    "uplink.ack",
                    "probabilities must lie in [0, 1] and sum to at most 1",
                );
            }
        }
        if let Some(f) = &self.filter {
            if !f.threshold.is_finite() {
                push("filter.threshold", "must be finite");
            }
            if !(f.hysteresis.is_finite() && f.hysteresis >= 0.0) {
                push("filter.hysteresis", "must be non-negative");
            }
        }
        if self.adr.enabled {
            match &self.adr.snr {
                None => push("adr.snr", "required when adr.enabled is true"),
                Some(SnrModel::Trace { values }) if values.is_empty() => {
                    push("adr.snr.values", "must not be empty")
                }
                Some(SnrModel::Trace { values }) if values.iter().any(|v| !v.is_finite()) => {
                    push("adr.snr.values", "must be finite")
                }
                Some(SnrModel::Normal { mean_db, sigma_db })
                    if !(mean_db.is_finite() && sigma_db.is_finite() && *sigma_db >= 0.0) =>
                {
                    push("adr.snr", "mean must be finite and sigma non-negative")
                }
                _ => {}
            }
            if self.adr.gateway_count == 0 {
                push("adr.gateway_count", "must be at least 1");
            }
        }
        if self.event_log.max_rows == 0 && self.event_log.mode != EventLogMode::None {
            push("event_log.max_rows", "must be at least 1");
        }

        issues.extend(self.profile.issues("profile"));
        issues.extend(self.mac.issues("mac"));
        issues.extend(self.sensing.issues("sensing"));
        issues.extend(self.signal.issues("signal"));
        issues.extend(self.accumulation.issues("accumulation"));
        if self.adr.enabled {
            issues.extend(self.adr.rule.issues("adr.rule"));
        }

        let tx = self.radio.tx_power_dbm;
        if !self.profile.tx_current_by_power.contains_key(&tx) {
            issues.push(ConfigIssue::new(
                "radio.tx_power_dbm",
                format!("{tx} dBm has no entry in profile.tx_current_by_power"),
            ));
        }
        if self.adr.enabled {
            let rule = &self.adr.rule;
            if let Some(missing) = (rule.min_power_dbm..=rule.max_power_dbm)
                .find(|p| !self.profile.tx_current_by_power.contains_key(p))
            {
                issues.push(ConfigIssue::new(
                    "adr.rule",
                    format!("ADR may select {missing} dBm, which the profile does not define"),
                ));
            }
        }
        // ADR backoff can take the node down to DR0.
        let slowest = if self.adr.enabled {
            DataRate::DR0
        } else {
            self.radio.dr
        };
        if let Err(Error::PayloadTooLarge { len, max }) =
            self.accumulation.check_fits(slowest.max_payload())
        {
            issues.push(ConfigIssue::new(
                "accumulation.batch_size",
                format!("a full batch needs {len} B but {slowest} carries at most {max} B"),
            ));
        }

        let calibration = match self.calibration() {
            Ok(c) => Some(c),
            Err(Error::Validation(cal_issues)) => {
                issues.extend(
                    cal_issues
                        .into_iter()
                        .map(|i| ConfigIssue::new(format!("calibration.{}", i.key), i.message)),
                );
                None
            }
            Err(other) => return Err(other),
        };

        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        if self.battery.voltage < self.profile.supply_voltage {
            return Err(Error::Battery(format!(
                "battery voltage {} V cannot supply the node's {} V rail",
                self.battery.voltage, self.profile.supply_voltage
            )));
        }
        Ok(calibration.expect("no issues implies a calibration"))
    }
}
