//! Node power model: per-state current draw, energy integration, the Rx window
//! calibration table and the per-state energy ledger.

mod calibration;
mod ledger;
mod profile;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use calibration::{
    transaction_rx_energy, CalibrationFile, CalibrationRow, RxEnergy, RxOutcome,
    RxWindowCalibration, RxWindowModel, Table1Row, TotalColumn, CALIBRATION_ENV,
    CALIBRATION_SCHEMA_VERSION, TOTAL_TOLERANCE_MJ,
};
pub use ledger::EnergyLedger;
pub use profile::{PowerProfile, MAX_TX_POWER_DBM, MIN_TX_POWER_DBM};

use crate::error::{Error, Result};
use crate::phy::{time_on_air, LoRaParams};

/// Ledger key: what the node was doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerState {
    Sleep,
    Sense,
    Process,
    Tx,
    Rx,
}

impl PowerState {
    pub const ALL: [PowerState; 5] = [
        PowerState::Sleep,
        PowerState::Sense,
        PowerState::Process,
        PowerState::Tx,
        PowerState::Rx,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PowerState::Sleep => "sleep",
            PowerState::Sense => "sense",
            PowerState::Process => "process",
            PowerState::Tx => "tx",
            PowerState::Rx => "rx",
        }
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A power state together with what selects its current (Tx power level).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Load {
    Sleep,
    Sense,
    Process,
    Rx,
    Tx { power_dbm: i8 },
}

impl Load {
    pub fn state(self) -> PowerState {
        match self {
            Load::Sleep => PowerState::Sleep,
            Load::Sense => PowerState::Sense,
            Load::Process => PowerState::Process,
            Load::Rx => PowerState::Rx,
            Load::Tx { .. } => PowerState::Tx,
        }
    }
}

impl PowerProfile {
    pub fn current(&self, load: Load) -> Result<f64> {
        Ok(match load {
            Load::Sleep => self.sleep_current,
            Load::Sense => self.sense_current,
            Load::Process => self.mcu_active_current(),
            Load::Rx => self.rx_current,
            Load::Tx { power_dbm } => self.tx_current(power_dbm)?,
        })
    }
}

/// E = V * I * t.
pub fn state_energy(profile: &PowerProfile, load: Load, duration_s: f64) -> Result<f64> {
    if duration_s.is_nan() || duration_s < 0.0 {
        return Err(Error::param(
            "duration",
            format!("must be non-negative, got {duration_s}"),
        ));
    }
    Ok(profile.supply_voltage * profile.current(load)? * duration_s)
}

/// Transmit energy per payload bit (J/bit).
pub fn energy_per_bit(
    profile: &PowerProfile,
    params: &LoRaParams,
    tx_power_dbm: i8,
    payload_len: usize,
) -> Result<f64> {
    if payload_len == 0 {
        return Err(Error::param(
            "payload",
            "energy per bit needs at least one byte",
        ));
    }
    let toa = time_on_air(params, payload_len)?;
    let joules = state_energy(
        profile,
        Load::Tx {
            power_dbm: tx_power_dbm,
        },
        toa,
    )?;
    Ok(joules / (8 * payload_len) as f64)
}

/// A contiguous interval the node spent in one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_us: i64,
    pub duration_us: i64,
    pub state: PowerState,
    pub energy_j: f64,
    pub detail: String,
}

impl Segment {
    pub fn end_us(&self) -> i64 {
        self.start_us + self.duration_us
    }

    /// Interval drawing the profile's current for `load`.
    pub fn timed(
        profile: &PowerProfile,
        load: Load,
        start_us: i64,
        duration_us: i64,
        detail: impl Into<String>,
    ) -> Result<Self> {
        let energy_j = state_energy(profile, load, duration_us as f64 * 1e-6)?;
        Ok(Segment {
            start_us,
            duration_us,
            state: load.state(),
            energy_j,
            detail: detail.into(),
        })
    }
}
