//! LoRaWAN Class A uplink transactions: timed Tx, RX1 and RX2 windows, ACK
//! outcomes, retransmissions and EU868 duty-cycle gating.

use serde::{Deserialize, Serialize};

use crate::energy::{
    transaction_rx_energy, Load, PowerProfile, PowerState, RxEnergy, RxOutcome,
    RxWindowCalibration, Segment,
};
use crate::error::{ConfigIssue, Error, Result};
use crate::phy::{datarate_params, time_on_air, to_micros, DataRate, LoRaParams};

/// RX2 opens exactly this long after RX1 (RECEIVE_DELAY2 - RECEIVE_DELAY1).
pub const RX2_AFTER_RX1_US: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub receive_delay1_s: f64,
    pub rx2_dr: DataRate,
    pub duty_cycle_limit: f64,
    pub max_retries: u32,
    pub retry_backoff_s: f64,
    pub coding_rate: u8,
    pub preamble_syms: u16,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            receive_delay1_s: 1.0,
            rx2_dr: DataRate::DR3,
            duty_cycle_limit: 0.01,
            max_retries: 3,
            retry_backoff_s: 2.0,
            coding_rate: 1,
            preamble_syms: 8,
        }
    }
}

impl MacConfig {
    pub fn issues(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if !(self.receive_delay1_s.is_finite() && self.receive_delay1_s > 0.0) {
            issues.push(ConfigIssue::new(
                format!("{prefix}.receive_delay1_s"),
                "must be positive",
            ));
        }
        if !(self.duty_cycle_limit > 0.0 && self.duty_cycle_limit <= 1.0) {
            issues.push(ConfigIssue::new(
                format!("{prefix}.duty_cycle_limit"),
                "must be in (0, 1]",
            ));
        }
        if !(self.retry_backoff_s.is_finite() && self.retry_backoff_s >= 0.0) {
            issues.push(ConfigIssue::new(
                format!("{prefix}.retry_backoff_s"),
                "must be non-negative",
            ));
        }
        if !(1..=4).contains(&self.coding_rate) {
            issues.push(ConfigIssue::new(
                format!("{prefix}.coding_rate"),
                "must be in 1..=4",
            ));
        }
        if self.preamble_syms == 0 {
            issues.push(ConfigIssue::new(
                format!("{prefix}.preamble_syms"),
                "must be at least 1",
            ));
        }
        issues
    }

    pub fn uplink_params(&self, dr: DataRate) -> LoRaParams {
        datarate_params(dr)
            .with_coding_rate(self.coding_rate)
            .with_preamble(self.preamble_syms)
    }

    pub fn uplink_airtime(&self, dr: DataRate, payload_len: usize) -> Result<f64> {
        time_on_air(&self.uplink_params(dr), payload_len)
    }
}

/// How the network answers a confirmed uplink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckPlan {
    Rx1,
    Rx2,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    AckRx1,
    AckRx2,
    NoAck,
    Unconfirmed,
}

impl Outcome {
    pub fn rx_outcome(self) -> RxOutcome {
        match self {
            Outcome::AckRx1 => RxOutcome::AckRx1,
            Outcome::AckRx2 => RxOutcome::AckRx2,
            Outcome::NoAck | Outcome::Unconfirmed => RxOutcome::NoAck,
        }
    }

    pub fn acknowledged(self) -> bool {
        matches!(self, Outcome::AckRx1 | Outcome::AckRx2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::AckRx1 => "ack_rx1",
            Outcome::AckRx2 => "ack_rx2",
            Outcome::NoAck => "no_ack",
            Outcome::Unconfirmed => "unconfirmed",
        }
    }
}

/// One transmission attempt requested by the node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UplinkAttempt {
    pub dr: DataRate,
    pub tx_power_dbm: i8,
    pub payload_len: usize,
    pub confirmed: bool,
    pub ack_plan: AckPlan,
    pub retries_used: u32,
}

/// Everything the planner reads besides the duty-cycle state.
#[derive(Debug, Clone, Copy)]
pub struct MacContext<'a> {
    pub config: &'a MacConfig,
    pub calibration: &'a RxWindowCalibration,
    pub profile: &'a PowerProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassATransaction {
    pub uplink_start_us: i64,
    pub uplink_duration_us: i64,
    pub dr: DataRate,
    pub tx_power_dbm: i8,
    pub payload_len: usize,
    pub confirmed: bool,
    pub rx1_open_us: i64,
    pub rx1_duration_us: i64,
    pub rx2_open_us: Option<i64>,
    pub rx2_duration_us: Option<i64>,
    pub outcome: Outcome,
    pub retries_used: u32,
    pub tx_energy_j: f64,
    pub rx1_energy_j: f64,
    pub rx2_energy_j: Option<f64>,
    pub rx_profile_derived: bool,
}

impl ClassATransaction {
    pub fn end_us(&self) -> i64 {
        match (self.rx2_open_us, self.rx2_duration_us) {
            (Some(open), Some(dur)) => open + dur,
            _ => self.rx1_open_us + self.rx1_duration_us,
        }
    }

    pub fn rx_energy_j(&self) -> f64 {
        self.rx1_energy_j + self.rx2_energy_j.unwrap_or(0.0)
    }

    /// Tx plus receive-window energy; the waits between windows are sleep.
    pub fn radio_energy_j(&self) -> f64 {
        self.tx_energy_j + self.rx_energy_j()
    }

    /// The transaction as a gap-free timeline from uplink start to the close
    /// of the last window.
    pub fn segments(&self, profile: &PowerProfile, label: &str) -> Result<Vec<Segment>> {
        let mut out = Vec::with_capacity(5);
        let tx_end = self.uplink_start_us + self.uplink_duration_us;
        out.push(Segment {
            start_us: self.uplink_start_us,
            duration_us: self.uplink_duration_us,
            state: PowerState::Tx,
            energy_j: self.tx_energy_j,
            detail: format!(
                "{label} tx {} {}dBm {}B",
                self.dr, self.tx_power_dbm, self.payload_len
            ),
        });
        out.push(Segment::timed(
            profile,
            Load::Sleep,
            tx_end,
            self.rx1_open_us - tx_end,
            format!("{label} wait rx1"),
        )?);
        let rx1_ack = self.outcome == Outcome::AckRx1;
        out.push(Segment {
            start_us: self.rx1_open_us,
            duration_us: self.rx1_duration_us,
            state: PowerState::Rx,
            energy_j: self.rx1_energy_j,
            detail: format!(
                "{label} rx1 {}{}",
                if rx1_ack { "ack" } else { "timeout" },
                if self.rx_profile_derived {
                    " profile-derived"
                } else {
                    ""
                }
            ),
        });
        if let (Some(open), Some(dur), Some(energy_j)) =
            (self.rx2_open_us, self.rx2_duration_us, self.rx2_energy_j)
        {
            let rx1_end = self.rx1_open_us + self.rx1_duration_us;
            out.push(Segment::timed(
                profile,
                Load::Sleep,
                rx1_end,
                open - rx1_end,
                format!("{label} wait rx2"),
            )?);
            let ack = self.outcome == Outcome::AckRx2;
            out.push(Segment {
                start_us: open,
                duration_us: dur,
                state: PowerState::Rx,
                energy_j,
                detail: format!(
                    "{label} rx2 {} {}",
                    if ack { "ack" } else { "timeout" },
                    self.outcome.as_str()
                ),
            });
        }
        Ok(out)
    }
}

/// Plans one Class A transaction starting at `now_us`, or at the next instant
/// the duty cycle permits.
pub fn plan_uplink(
    ctx: &MacContext<'_>,
    duty: &DutyCycleState,
    now_us: i64,
    attempt: &UplinkAttempt,
) -> Result<ClassATransaction> {
    let toa = ctx.config.uplink_airtime(attempt.dr, attempt.payload_len)?;
    let uplink_duration_us = to_micros(toa);
    let uplink_start_us = duty.next_permitted_time(now_us, uplink_duration_us);
    let rx1_open_us = uplink_start_us + uplink_duration_us + to_micros(ctx.config.receive_delay1_s);

    let outcome = if !attempt.confirmed {
        Outcome::Unconfirmed
    } else {
        match attempt.ack_plan {
            AckPlan::Rx1 => Outcome::AckRx1,
            AckPlan::Rx2 => Outcome::AckRx2,
            AckPlan::None => Outcome::NoAck,
        }
    };
    let rx: RxEnergy = transaction_rx_energy(
        ctx.calibration,
        attempt.dr,
        outcome.rx_outcome(),
        Some(ctx.profile),
    )?;
    let model = &ctx.calibration.model;
    let rx1_duration_us = to_micros(model.window_duration(attempt.dr, outcome == Outcome::AckRx1)?);
    let (rx2_open_us, rx2_duration_us) = if outcome == Outcome::AckRx1 {
        (None, None)
    } else {
        if rx1_duration_us > RX2_AFTER_RX1_US {
            return Err(Error::param(
                "rx_model",
                format!("RX1 window at {} outlasts the RX2 delay", attempt.dr),
            ));
        }
        let dur = model.window_duration(ctx.config.rx2_dr, outcome == Outcome::AckRx2)?;
        (Some(rx1_open_us + RX2_AFTER_RX1_US), Some(to_micros(dur)))
    };
    let tx_energy_j = crate::energy::state_energy(
        ctx.profile,
        Load::Tx {
            power_dbm: attempt.tx_power_dbm,
        },
        uplink_duration_us as f64 * 1e-6,
    )?;
    Ok(ClassATransaction {
        uplink_start_us,
        uplink_duration_us,
        dr: attempt.dr,
        tx_power_dbm: attempt.tx_power_dbm,
        payload_len: attempt.payload_len,
        confirmed: attempt.confirmed,
        rx1_open_us,
        rx1_duration_us,
        rx2_open_us,
        rx2_duration_us,
        outcome,
        retries_used: attempt.retries_used,
        tx_energy_j,
        rx1_energy_j: rx.rx1_mj * 1e-3,
        rx2_energy_j: rx.rx2_mj.map(|mj| mj * 1e-3),
        rx_profile_derived: rx.profile_derived,
    })
}

/// Per-transmission off-time duty cycle: after sending for `toa` the band is
/// closed until `start + toa / limit`.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyCycleState {
    limit: f64,
    ready_at_us: i64,
    on_air_us: i64,
}

impl DutyCycleState {
    pub fn new(limit: f64) -> Self {
        DutyCycleState {
            limit,
            ready_at_us: i64::MIN,
            on_air_us: 0,
        }
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    /// Total on-air time recorded so far.
    pub fn on_air_us(&self) -> i64 {
        self.on_air_us
    }

    /// Earliest start at or after `now_us` for a frame of `toa_us`.
    pub fn next_permitted_time(&self, now_us: i64, toa_us: i64) -> i64 {
        debug_assert!(toa_us > 0);
        if self.limit >= 1.0 {
            now_us
        } else {
            now_us.max(self.ready_at_us)
        }
    }

    pub fn record(&mut self, start_us: i64, toa_us: i64) {
        self.on_air_us += toa_us;
        if self.limit < 1.0 {
            let cycle = (toa_us as f64 / self.limit).ceil() as i64;
            self.ready_at_us = self.ready_at_us.max(start_us + cycle);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryDecision {
    /// Nothing further to send.
    Done,
    /// Send again at `at_us`; `attempt` counts retries used so far.
    Retry { at_us: i64, retries_used: u32 },
    /// Retries exhausted without an ACK.
    GiveUp,
}

pub fn retransmit_policy(
    transaction: &ClassATransaction,
    max_retries: u32,
    backoff_s: f64,
) -> RetryDecision {
    if transaction.outcome != Outcome::NoAck {
        return RetryDecision::Done;
    }
    if transaction.retries_used < max_retries {
        RetryDecision::Retry {
            at_us: transaction.end_us() + to_micros(backoff_s),
            retries_used: transaction.retries_used + 1,
        }
    } else {
        RetryDecision::GiveUp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixture {
        config: MacConfig,
        calibration: RxWindowCalibration,
        profile: PowerProfile,
    }

    impl Fixture {
        fn new() -> Self {
            Fixture {
                config: MacConfig::default(),
                calibration: RxWindowCalibration::shipped(),
                profile: PowerProfile::default(),
            }
        }

        fn ctx(&self) -> MacContext<'_> {
            MacContext {
                config: &self.config,
                calibration: &self.calibration,
                profile: &self.profile,
            }
        }
    }

    fn attempt(dr: DataRate, confirmed: bool, ack_plan: AckPlan) -> UplinkAttempt {
        UplinkAttempt {
            dr,
            tx_power_dbm: 14,
            payload_len: 12,
            confirmed,
            ack_plan,
            retries_used: 0,
        }
    }

    #[test]
    fn confirmed_dr0_without_ack() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(0.01);
        let tx = plan_uplink(
            &f.ctx(),
            &duty,
            0,
            &attempt(DataRate::DR0, true, AckPlan::None),
        )
        .unwrap();
        assert_eq!(tx.outcome, Outcome::NoAck);
        assert!((tx.rx_energy_j() - 7.7e-3).abs() < 1e-12);
        assert_eq!(tx.rx1_open_us, tx.uplink_duration_us + 1_000_000);
        assert_eq!(tx.rx2_open_us, Some(tx.rx1_open_us + 1_000_000));
    }

    #[test]
    fn confirmed_dr5_ack_in_rx1() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(0.01);
        let tx = plan_uplink(
            &f.ctx(),
            &duty,
            0,
            &attempt(DataRate::DR5, true, AckPlan::Rx1),
        )
        .unwrap();
        assert_eq!(tx.rx2_open_us, None);
        assert!((tx.rx_energy_j() - 1.7e-3).abs() < 1e-12);
        assert!(!tx.rx_profile_derived);
    }

    #[test]
    fn unconfirmed_opens_both_windows() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(0.01);
        let tx = plan_uplink(
            &f.ctx(),
            &duty,
            5,
            &attempt(DataRate::DR3, false, AckPlan::Rx1),
        )
        .unwrap();
        assert_eq!(tx.outcome, Outcome::Unconfirmed);
        assert_eq!(tx.retries_used, 0);
        assert!(tx.rx2_open_us.is_some());
        assert!((tx.rx_energy_j() - 2.6e-3).abs() < 1e-12);
        assert_eq!(retransmit_policy(&tx, 3, 2.0), RetryDecision::Done);
    }

    #[test]
    fn profile_derived_rx1_ack_at_slow_rates() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(1.0);
        let tx = plan_uplink(
            &f.ctx(),
            &duty,
            0,
            &attempt(DataRate::DR1, true, AckPlan::Rx1),
        )
        .unwrap();
        assert!(tx.rx_profile_derived);
        let segs = tx.segments(&f.profile, "u1").unwrap();
        assert!(segs[2].detail.contains("profile-derived"));
    }

    #[test]
    fn segments_are_contiguous_and_decompose_energy() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(0.01);
        for dr in DataRate::ALL {
            for plan in [AckPlan::Rx1, AckPlan::Rx2, AckPlan::None] {
                let tx = plan_uplink(&f.ctx(), &duty, 1000, &attempt(dr, true, plan)).unwrap();
                let segs = tx.segments(&f.profile, "u").unwrap();
                for pair in segs.windows(2) {
                    assert_eq!(pair[0].end_us(), pair[1].start_us);
                }
                assert_eq!(segs[0].start_us, 1000);
                assert_eq!(segs.last().unwrap().end_us(), tx.end_us());
                let radio: f64 = segs
                    .iter()
                    .filter(|s| s.state != PowerState::Sleep)
                    .map(|s| s.energy_j)
                    .sum();
                assert!((radio - tx.radio_energy_j()).abs() < 1e-15);
                if let Some(rx2) = tx.rx2_open_us {
                    assert_eq!(rx2 - tx.rx1_open_us, RX2_AFTER_RX1_US);
                }
            }
        }
    }

    #[test]
    fn payload_too_large() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(0.01);
        let mut a = attempt(DataRate::DR0, false, AckPlan::None);
        a.payload_len = 60;
        assert!(matches!(
            plan_uplink(&f.ctx(), &duty, 0, &a),
            Err(Error::PayloadTooLarge { .. })
        ));
    }

    #[test]
    fn duty_cycle_examples() {
        let empty = DutyCycleState::new(0.01);
        assert_eq!(empty.next_permitted_time(42, 1000), 42);

        let mut d = DutyCycleState::new(0.01);
        d.record(0, 2_470_000);
        assert!(d.next_permitted_time(0, 1000) >= 247_000_000);
        assert_eq!(d.next_permitted_time(300_000_000, 1000), 300_000_000);

        let mut free = DutyCycleState::new(1.0);
        free.record(0, 2_470_000);
        assert_eq!(free.next_permitted_time(1, 1000), 1);
    }

    #[test]
    fn planner_waits_for_duty_cycle() {
        let f = Fixture::new();
        let mut duty = DutyCycleState::new(0.01);
        let a = attempt(DataRate::DR0, false, AckPlan::None);
        let first = plan_uplink(&f.ctx(), &duty, 0, &a).unwrap();
        duty.record(first.uplink_start_us, first.uplink_duration_us);
        let second = plan_uplink(&f.ctx(), &duty, first.end_us(), &a).unwrap();
        assert_eq!(second.uplink_start_us, first.uplink_duration_us * 100);
    }

    #[test]
    fn retries_until_exhausted() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(1.0);
        let mut a = attempt(DataRate::DR0, true, AckPlan::None);
        let mut attempts = 0;
        let mut now = 0;
        loop {
            let tx = plan_uplink(&f.ctx(), &duty, now, &a).unwrap();
            attempts += 1;
            assert!((tx.rx_energy_j() - 7.7e-3).abs() < 1e-12);
            match retransmit_policy(&tx, 3, 2.0) {
                RetryDecision::Retry {
                    at_us,
                    retries_used,
                } => {
                    assert_eq!(at_us, tx.end_us() + 2_000_000);
                    a.retries_used = retries_used;
                    now = at_us;
                }
                RetryDecision::GiveUp => break,
                RetryDecision::Done => panic!("no_ack must not finish"),
            }
        }
        assert_eq!(attempts, 4);
    }

    #[test]
    fn ack_rx2_is_final() {
        let f = Fixture::new();
        let duty = DutyCycleState::new(1.0);
        let tx = plan_uplink(
            &f.ctx(),
            &duty,
            0,
            &attempt(DataRate::DR2, true, AckPlan::Rx2),
        )
        .unwrap();
        assert_eq!(retransmit_policy(&tx, 3, 2.0), RetryDecision::Done);
    }
}
