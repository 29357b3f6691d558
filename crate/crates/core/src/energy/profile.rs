use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, Error, Result};

pub const MIN_TX_POWER_DBM: i8 = 2;
pub const MAX_TX_POWER_DBM: i8 = 14;

/// Supply voltage and per-state current draw of the node.
///
/// The Tx table defaults to a linear 8 mA (2 dBm) .. 20 mA (14 dBm) sweep and
/// the Rx current to 12 mA. Together with the shipped Rx window calibration
/// that makes a 12 B DR0 uplink cost roughly ten times its no-ACK receive
/// windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerProfile {
    pub supply_voltage: f64,
    pub sleep_current: f64,
    /// EM0 current per MHz of core clock.
    pub mcu_current_per_mhz: f64,
    pub mcu_clock_mhz: f64,
    pub sense_current: f64,
    pub rx_current: f64,
    pub tx_current_by_power: BTreeMap<i8, f64>,
}

impl Default for PowerProfile {
    fn default() -> Self {
        let tx_current_by_power = (MIN_TX_POWER_DBM..=MAX_TX_POWER_DBM)
            .map(|dbm| (dbm, 8e-3 + 1e-3 * f64::from(dbm - MIN_TX_POWER_DBM)))
            .collect();
        PowerProfile {
            supply_voltage: 3.3,
            sleep_current: 1e-6,
            mcu_current_per_mhz: 150e-6,
            mcu_clock_mhz: 14.0,
            sense_current: 10e-3,
            rx_current: 12e-3,
            tx_current_by_power,
        }
    }
}

impl PowerProfile {
    pub fn mcu_active_current(&self) -> f64 {
        self.mcu_current_per_mhz * self.mcu_clock_mhz
    }

    pub fn tx_current(&self, power_dbm: i8) -> Result<f64> {
        self.tx_current_by_power
            .get(&power_dbm)
            .copied()
            .ok_or_else(|| Error::CalibrationMissing(format!("no Tx current for {power_dbm} dBm")))
    }

    pub fn max_tx_power(&self) -> Option<i8> {
        self.tx_current_by_power.keys().next_back().copied()
    }

    pub fn issues(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut positive = |key: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                issues.push(ConfigIssue::new(
                    format!("{prefix}.{key}"),
                    format!("must be positive, got {v}"),
                ));
            }
        };
        positive("supply_voltage", self.supply_voltage);
        positive("sleep_current", self.sleep_current);
        positive("mcu_current_per_mhz", self.mcu_current_per_mhz);
        positive("mcu_clock_mhz", self.mcu_clock_mhz);
        positive("sense_current", self.sense_current);
        positive("rx_current", self.rx_current);
        for (dbm, amps) in &self.tx_current_by_power {
            positive(&format!("tx_current_by_power.{dbm}"), *amps);
        }
        if self.tx_current_by_power.is_empty() {
            issues.push(ConfigIssue::new(
                format!("{prefix}.tx_current_by_power"),
                "at least one Tx power level is required",
            ));
        }
        if let Some((dbm, amps)) = self.tx_current_by_power.iter().next_back() {
            if *amps < self.rx_current {
                issues.push(ConfigIssue::new(
                    format!("{prefix}.tx_current_by_power.{dbm}"),
                    format!(
                        "Tx current at maximum power ({amps} A) is below the Rx current ({} A)",
                        self.rx_current
                    ),
                ));
            }
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues("profile");
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }
}
