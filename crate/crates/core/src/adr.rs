//! Network-side Adaptive Data Rate: max-SNR over a sliding history, 3 dB
//! steps spent first on data rate, then on lowering Tx power.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::energy::{MAX_TX_POWER_DBM, MIN_TX_POWER_DBM};
use crate::error::ConfigIssue;
use crate::phy::DataRate;

/// Demodulation floor in dB for SF7..SF12.
pub fn required_snr(sf: u8) -> f64 {
    match sf {
        7 => -7.5,
        8 => -10.0,
        9 => -12.5,
        10 => -15.0,
        11 => -17.5,
        _ => -20.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UplinkObservation {
    pub snr_db: f64,
    pub gateway_count: u32,
    pub dr: DataRate,
    pub tx_power_dbm: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSettings {
    pub dr: DataRate,
    pub tx_power_dbm: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdrConfig {
    pub history_len: usize,
    pub device_margin_db: f64,
    pub step_db: f64,
    pub min_power_dbm: i8,
    pub max_power_dbm: i8,
    /// Uplinks without any downlink before the device steps its DR down.
    pub ack_limit: u32,
}

impl Default for AdrConfig {
    fn default() -> Self {
        AdrConfig {
            history_len: 20,
            device_margin_db: 10.0,
            step_db: 3.0,
            min_power_dbm: MIN_TX_POWER_DBM,
            max_power_dbm: MAX_TX_POWER_DBM,
            ack_limit: 64,
        }
    }
}

impl AdrConfig {
    pub fn issues(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.history_len == 0 {
            issues.push(ConfigIssue::new(
                format!("{prefix}.history_len"),
                "must be at least 1",
            ));
        }
        if !self.device_margin_db.is_finite() {
            issues.push(ConfigIssue::new(
                format!("{prefix}.device_margin_db"),
                "must be finite",
            ));
        }
        if !(self.step_db.is_finite() && self.step_db > 0.0) {
            issues.push(ConfigIssue::new(
                format!("{prefix}.step_db"),
                "must be positive",
            ));
        }
        if self.min_power_dbm > self.max_power_dbm {
            issues.push(ConfigIssue::new(
                format!("{prefix}.min_power_dbm"),
                "must not exceed max_power_dbm",
            ));
        }
        if self.ack_limit == 0 {
            issues.push(ConfigIssue::new(
                format!("{prefix}.ack_limit"),
                "must be at least 1",
            ));
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdrState {
    config: AdrConfig,
    history: VecDeque<UplinkObservation>,
}

impl AdrState {
    pub fn new(config: AdrConfig) -> Self {
        AdrState {
            config,
            history: VecDeque::with_capacity(config.history_len),
        }
    }

    pub fn config(&self) -> &AdrConfig {
        &self.config
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &UplinkObservation> {
        self.history.iter()
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn snr_max(&self) -> Option<f64> {
        self.history.iter().map(|o| o.snr_db).reduce(f64::max)
    }

    pub fn record(&mut self, obs: UplinkObservation) {
        if self.history.len() == self.config.history_len {
            self.history.pop_front();
        }
        self.history.push_back(obs);
    }
}

pub fn record_uplink(mut state: AdrState, obs: UplinkObservation) -> AdrState {
    state.record(obs);
    state
}

/// New link settings for the device, or `None` while the history is empty.
pub fn adr_decision(state: &AdrState, current: LinkSettings) -> Option<LinkSettings> {
    let snr_max = state.snr_max()?;
    let cfg = &state.config;
    let margin = snr_max - required_snr(current.dr.spreading_factor()) - cfg.device_margin_db;
    let mut steps = (margin / cfg.step_db).floor() as i64;
    let step = cfg.step_db.round() as i64;
    let (min_p, max_p) = (i64::from(cfg.min_power_dbm), i64::from(cfg.max_power_dbm));

    let mut dr = current.dr;
    let mut power = i64::from(current.tx_power_dbm).clamp(min_p, max_p);
    while steps > 0 {
        if let Some(faster) = dr.faster() {
            dr = faster;
        } else if power > min_p {
            power = (power - step).max(min_p);
        } else {
            break;
        }
        steps -= 1;
    }
    while steps < 0 && power < max_p {
        power = (power + step).min(max_p);
        steps += 1;
    }
    Some(LinkSettings {
        dr,
        tx_power_dbm: power as i8,
    })
}

/// Device-side backoff: after `limit` uplinks without a downlink, step the
/// data rate down by one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdrAckCounter {
    pub count: u32,
}

impl AdrAckCounter {
    /// Registers an uplink; returns true when the device should drop its DR.
    pub fn on_uplink(&mut self, answered: bool, limit: u32) -> bool {
        if answered {
            self.count = 0;
            return false;
        }
        self.count += 1;
        if self.count >= limit {
            self.count = 0;
            true
        } else {
            false
        }
    }

    pub fn requests_answer(&self, limit: u32) -> bool {
        self.count + 1 >= limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(snr_db: f64) -> UplinkObservation {
        UplinkObservation {
            snr_db,
            gateway_count: 1,
            dr: DataRate::DR0,
            tx_power_dbm: 14,
        }
    }

    fn state_with(snrs: &[f64]) -> AdrState {
        snrs.iter()
            .fold(AdrState::new(AdrConfig::default()), |s, &v| {
                record_uplink(s, obs(v))
            })
    }

    #[test]
    fn history_fifo() {
        let s = state_with(&[1.0]);
        assert_eq!(s.len(), 1);
        let snrs: Vec<f64> = (0..21).map(f64::from).collect();
        let s = state_with(&snrs);
        assert_eq!(s.len(), 20);
        assert_eq!(s.history().next().unwrap().snr_db, 1.0);
        assert_eq!(state_with(&snrs), state_with(&snrs));
    }

    #[test]
    fn empty_history_gives_no_decision() {
        let s = AdrState::new(AdrConfig::default());
        let cur = LinkSettings {
            dr: DataRate::DR0,
            tx_power_dbm: 14,
        };
        assert_eq!(adr_decision(&s, cur), None);
    }

    #[test]
    fn zero_steps_is_fixed_point() {
        // margin = -2 - (-7.5) - 10 = -4.5 -> floor(-1.5) = -2, at max power: unchanged
        let s = state_with(&[-2.0]);
        let cur = LinkSettings {
            dr: DataRate::DR5,
            tx_power_dbm: 14,
        };
        assert_eq!(adr_decision(&s, cur), Some(cur));
        // margin in [0, 3) -> nstep 0
        let s = state_with(&[4.0]);
        let cur = LinkSettings {
            dr: DataRate::DR5,
            tx_power_dbm: 8,
        };
        assert_eq!(adr_decision(&s, cur), Some(cur));
    }

    #[test]
    fn three_steps_from_dr0() {
        let s = state_with(&[0.0]);
        let cur = LinkSettings {
            dr: DataRate::DR0,
            tx_power_dbm: 14,
        };
        assert_eq!(
            adr_decision(&s, cur),
            Some(LinkSettings {
                dr: DataRate::DR3,
                tx_power_dbm: 14
            })
        );
    }

    #[test]
    fn power_steps_clamp_at_floor() {
        let s = state_with(&[20.0]);
        let cur = LinkSettings {
            dr: DataRate::DR5,
            tx_power_dbm: 14,
        };
        assert_eq!(
            adr_decision(&s, cur),
            Some(LinkSettings {
                dr: DataRate::DR5,
                tx_power_dbm: 2
            })
        );
    }

    #[test]
    fn negative_margin_raises_power_only() {
        let s = state_with(&[-15.0]);
        let cur = LinkSettings {
            dr: DataRate::DR5,
            tx_power_dbm: 2,
        };
        // margin = -15 + 7.5 - 10 = -17.5 -> -6 steps, power capped at 14
        assert_eq!(
            adr_decision(&s, cur),
            Some(LinkSettings {
                dr: DataRate::DR5,
                tx_power_dbm: 14
            })
        );
    }

    #[test]
    fn ack_counter_backoff() {
        let mut c = AdrAckCounter::default();
        for _ in 0..63 {
            assert!(!c.on_uplink(false, 64));
        }
        assert!(c.requests_answer(64));
        assert!(c.on_uplink(false, 64));
        assert_eq!(c.count, 0);
        c.on_uplink(false, 64);
        assert!(!c.on_uplink(true, 64));
        assert_eq!(c.count, 0);
    }
}
