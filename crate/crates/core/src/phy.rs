//! LoRa PHY timing: symbol duration, time on air and the EU868 data-rate table.
//!
//! Durations are `f64` seconds. For 125 kHz channels every duration this
//! module produces is an exact multiple of 2 µs, so [`to_micros`] is lossless
//! there.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BW_125K: u32 = 125_000;

/// Largest PHY payload the radio can carry, independent of region.
pub const MAX_PHY_PAYLOAD: usize = 255;

/// EU868 data-rate index (DR0 slowest, DR5 fastest, all 125 kHz).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DataRate(u8);

impl DataRate {
    pub const DR0: DataRate = DataRate(0);
    pub const DR1: DataRate = DataRate(1);
    pub const DR2: DataRate = DataRate(2);
    pub const DR3: DataRate = DataRate(3);
    pub const DR4: DataRate = DataRate(4);
    pub const DR5: DataRate = DataRate(5);

    pub const ALL: [DataRate; 6] = [
        Self::DR0,
        Self::DR1,
        Self::DR2,
        Self::DR3,
        Self::DR4,
        Self::DR5,
    ];

    pub fn new(index: u8) -> Result<Self> {
        if index <= 5 {
            Ok(DataRate(index))
        } else {
            Err(Error::param("dr", format!("{index} is outside DR0..DR5")))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn spreading_factor(self) -> u8 {
        12 - self.0
    }

    pub fn bandwidth_hz(self) -> u32 {
        BW_125K
    }

    /// Regional maximum payload (bytes) at this data rate.
    pub fn max_payload(self) -> usize {
        match self.0 {
            0..=2 => 51,
            3 => 115,
            _ => 222,
        }
    }

    pub fn faster(self) -> Option<DataRate> {
        (self.0 < 5).then(|| DataRate(self.0 + 1))
    }

    pub fn slower(self) -> Option<DataRate> {
        self.0.checked_sub(1).map(DataRate)
    }

    /// Inverse of the EU868 table: the DR whose (SF, BW) pair this is, if any.
    pub fn from_modulation(sf: u8, bw_hz: u32) -> Option<DataRate> {
        (bw_hz == BW_125K && (7..=12).contains(&sf)).then(|| DataRate(12 - sf))
    }
}

impl TryFrom<u8> for DataRate {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        DataRate::new(value)
    }
}

impl From<DataRate> for u8 {
    fn from(dr: DataRate) -> u8 {
        dr.0
    }
}

impl fmt::Display for DataRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DR{}", self.0)
    }
}

/// Modulation and framing parameters of one LoRa frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoRaParams {
    pub sf: u8,
    pub bw_hz: u32,
    /// Coding rate offset: 1 means 4/5, 4 means 4/8.
    pub cr: u8,
    pub preamble_syms: u16,
    pub explicit_header: bool,
    pub crc_on: bool,
    pub low_dr_optimize: bool,
}

impl LoRaParams {
    /// Uplink defaults: CR 4/5, 8 preamble symbols, explicit header, CRC on,
    /// low data rate optimisation derived from (SF, BW).
    pub fn new(sf: u8, bw_hz: u32) -> Result<Self> {
        let params = LoRaParams {
            sf,
            bw_hz,
            cr: 1,
            preamble_syms: 8,
            explicit_header: true,
            crc_on: true,
            low_dr_optimize: requires_low_dr_optimize(sf, bw_hz),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_coding_rate(mut self, cr: u8) -> Self {
        self.cr = cr;
        self
    }

    pub fn with_preamble(mut self, syms: u16) -> Self {
        self.preamble_syms = syms;
        self
    }

    /// Same modulation configured for a downlink: CRC off.
    pub fn downlink(mut self) -> Self {
        self.crc_on = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(7..=12).contains(&self.sf) {
            return Err(Error::param("sf", format!("{} is outside 7..=12", self.sf)));
        }
        if self.bw_hz == 0 {
            return Err(Error::param("bw", "must be positive"));
        }
        if !(1..=4).contains(&self.cr) {
            return Err(Error::param("cr", format!("{} is outside 1..=4", self.cr)));
        }
        if self.preamble_syms == 0 {
            return Err(Error::param("preamble", "must be at least one symbol"));
        }
        Ok(())
    }

    pub fn data_rate(&self) -> Option<DataRate> {
        DataRate::from_modulation(self.sf, self.bw_hz)
    }

    /// Payload limit: the regional DR maximum when the modulation is an EU868
    /// data rate, otherwise the radio's 255 B.
    pub fn max_payload(&self) -> usize {
        self.data_rate()
            .map_or(MAX_PHY_PAYLOAD, DataRate::max_payload)
    }

    pub fn symbol_duration(&self) -> f64 {
        f64::from(1u32 << self.sf) / f64::from(self.bw_hz)
    }

    /// Symbols in the payload section (header and CRC included), minimum 8.
    pub fn payload_symbols(&self, payload_len: usize) -> u32 {
        let sf = i64::from(self.sf);
        let de = i64::from(self.low_dr_optimize);
        let ih = i64::from(!self.explicit_header);
        let crc = i64::from(self.crc_on);
        let bits = 8 * payload_len as i64 - 4 * sf + 28 + 16 * crc - 20 * ih;
        let per_block = 4 * (sf - 2 * de);
        let blocks = if bits > 0 {
            (bits + per_block - 1) / per_block
        } else {
            0
        };
        8 + (blocks * (i64::from(self.cr) + 4)) as u32
    }

    pub fn preamble_duration(&self) -> f64 {
        (f64::from(self.preamble_syms) + 4.25) * self.symbol_duration()
    }
}

pub fn requires_low_dr_optimize(sf: u8, bw_hz: u32) -> bool {
    sf >= 11 && bw_hz == BW_125K
}

pub fn symbol_duration(sf: u8, bw_hz: u32) -> Result<f64> {
    if !(7..=12).contains(&sf) {
        return Err(Error::param("sf", format!("{sf} is outside 7..=12")));
    }
    if bw_hz == 0 {
        return Err(Error::param("bw", "must be positive"));
    }
    Ok(f64::from(1u32 << sf) / f64::from(bw_hz))
}

/// Time on air in seconds of a frame carrying `payload_len` PHY payload bytes.
pub fn time_on_air(params: &LoRaParams, payload_len: usize) -> Result<f64> {
    params.validate()?;
    let max = params.max_payload();
    if payload_len > max {
        return Err(Error::PayloadTooLarge {
            len: payload_len,
            max,
        });
    }
    let t_sym = params.symbol_duration();
    Ok(params.preamble_duration() + f64::from(params.payload_symbols(payload_len)) * t_sym)
}

pub fn datarate_params(dr: DataRate) -> LoRaParams {
    let sf = dr.spreading_factor();
    let bw_hz = dr.bandwidth_hz();
    LoRaParams {
        sf,
        bw_hz,
        cr: 1,
        preamble_syms: 8,
        explicit_header: true,
        crc_on: true,
        low_dr_optimize: requires_low_dr_optimize(sf, bw_hz),
    }
}

/// Rounds seconds to the integer microsecond grid used by the simulator.
pub fn to_micros(seconds: f64) -> i64 {
    (seconds * 1e6).round() as i64
}
