//! Application behaviour of the node: when it wakes, which samples are worth
//! sending and how many samples share one uplink.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, Error, Result};
use crate::phy::to_micros;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensingMode {
    /// Read the sensor every `period_s`.
    Poll {
        period_s: f64,
        sample_duration_s: f64,
    },
    /// Sleep until a sensor or comparator interrupt fires.
    Interrupt {
        event_rate_per_hour: f64,
        wake_duration_s: f64,
    },
}

impl SensingMode {
    pub fn sample_duration_s(&self) -> f64 {
        match self {
            SensingMode::Poll {
                sample_duration_s, ..
            } => *sample_duration_s,
            SensingMode::Interrupt {
                wake_duration_s, ..
            } => *wake_duration_s,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, SensingMode::Interrupt { event_rate_per_hour, .. } if *event_rate_per_hour > 0.0)
    }

    pub fn issues(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        match self {
            SensingMode::Poll {
                period_s,
                sample_duration_s,
            } => {
                if !(period_s.is_finite() && *period_s > 0.0) {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.period_s"),
                        "must be positive",
                    ));
                }
                if !(sample_duration_s.is_finite() && *sample_duration_s > 0.0) {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.sample_duration_s"),
                        "must be positive",
                    ));
                }
                if sample_duration_s >= period_s {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.sample_duration_s"),
                        "must be shorter than period_s",
                    ));
                }
            }
            SensingMode::Interrupt {
                event_rate_per_hour,
                wake_duration_s,
            } => {
                if !(event_rate_per_hour.is_finite() && *event_rate_per_hour >= 0.0) {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.event_rate_per_hour"),
                        "must be non-negative",
                    ));
                }
                if !(wake_duration_s.is_finite() && *wake_duration_s > 0.0) {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.wake_duration_s"),
                        "must be positive",
                    ));
                }
            }
        }
        issues
    }
}

/// Seeded exponential inter-arrival generator for interrupt events.
#[derive(Debug, Clone)]
pub struct EventStream {
    rng: ChaCha8Rng,
    exp: Option<Exp<f64>>,
}

impl EventStream {
    pub fn new(rng: ChaCha8Rng, rate_per_hour: f64) -> Self {
        let exp =
            (rate_per_hour > 0.0).then(|| Exp::new(rate_per_hour / 3600.0).expect("positive rate"));
        EventStream { rng, exp }
    }

    /// Gap to the next event in µs (at least 1), or `None` for a zero rate.
    pub fn next_gap_us(&mut self) -> Option<i64> {
        let exp = self.exp?;
        Some(to_micros(exp.sample(&mut self.rng)).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WakeAction {
    PollSample,
    InterruptSample,
}

/// Time of the next wake-up after `now_us`; `None` means sleep forever.
pub fn next_wake(
    mode: &SensingMode,
    now_us: i64,
    events: &mut EventStream,
) -> Option<(i64, WakeAction)> {
    match mode {
        SensingMode::Poll { period_s, .. } => {
            Some((now_us + to_micros(*period_s), WakeAction::PollSample))
        }
        SensingMode::Interrupt { .. } => events
            .next_gap_us()
            .map(|gap| (now_us + gap, WakeAction::InterruptSample)),
    }
}

/// Value read by a polled sensor as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalModel {
    Constant {
        value: f64,
    },
    /// `high` for the first `high_s` of every `period_s`, `low` otherwise.
    Square {
        period_s: f64,
        high_s: f64,
        low: f64,
        high: f64,
        #[serde(default)]
        phase_s: f64,
    },
    /// Piecewise-constant trace, `step_s` per value, repeating.
    Trace {
        step_s: f64,
        values: Vec<f64>,
    },
}

impl Default for SignalModel {
    fn default() -> Self {
        SignalModel::Constant { value: 0.0 }
    }
}

impl SignalModel {
    pub fn value_at(&self, t_us: i64) -> f64 {
        match self {
            SignalModel::Constant { value } => *value,
            SignalModel::Square {
                period_s,
                high_s,
                low,
                high,
                phase_s,
            } => {
                let period = to_micros(*period_s);
                let pos = (t_us + to_micros(*phase_s)).rem_euclid(period);
                if pos < to_micros(*high_s) {
                    *high
                } else {
                    *low
                }
            }
            SignalModel::Trace { step_s, values } => {
                let idx = (t_us / to_micros(*step_s)) as usize % values.len();
                values[idx]
            }
        }
    }

    pub fn issues(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        match self {
            SignalModel::Constant { value } => {
                if !value.is_finite() {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.value"),
                        "must be finite",
                    ));
                }
            }
            SignalModel::Square {
                period_s, high_s, ..
            } => {
                if !(period_s.is_finite() && to_micros(*period_s) > 0) {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.period_s"),
                        "must be positive",
                    ));
                }
                if !(*high_s >= 0.0 && high_s <= period_s) {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.high_s"),
                        "must be within [0, period_s]",
                    ));
                }
            }
            SignalModel::Trace { step_s, values } => {
                if !(step_s.is_finite() && to_micros(*step_s) > 0) {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.step_s"),
                        "must be positive",
                    ));
                }
                if values.is_empty() {
                    issues.push(ConfigIssue::new(
                        format!("{prefix}.values"),
                        "must not be empty",
                    ));
                }
            }
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccumulationPolicy {
    pub batch_size: usize,
    pub sample_bytes: usize,
    /// Flush a partial batch once its oldest sample is this old.
    pub deadline_s: Option<f64>,
    /// LoRaWAN framing added to every uplink (MHDR, FHDR, FPort, MIC).
    pub overhead_bytes: usize,
    /// Output/input byte ratio of on-node compression; 1 means none.
    pub compression_ratio: f64,
}

impl Default for AccumulationPolicy {
    fn default() -> Self {
        AccumulationPolicy {
            batch_size: 1,
            sample_bytes: 2,
            deadline_s: None,
            overhead_bytes: 13,
            compression_ratio: 1.0,
        }
    }
}

impl AccumulationPolicy {
    /// PHY payload of an uplink carrying `samples` samples.
    pub fn payload_len(&self, samples: usize) -> usize {
        let raw = samples * self.sample_bytes;
        let packed = if self.compression_ratio == 1.0 {
            raw
        } else {
            (raw as f64 * self.compression_ratio).ceil() as usize
        };
        packed + self.overhead_bytes
    }

    pub fn max_payload_len(&self) -> usize {
        self.payload_len(self.batch_size)
    }

    pub fn check_fits(&self, max_payload: usize) -> Result<()> {
        let len = self.max_payload_len();
        if len > max_payload {
            Err(Error::PayloadTooLarge {
                len,
                max: max_payload,
            })
        } else {
            Ok(())
        }
    }

    pub fn issues(&self, prefix: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if self.batch_size == 0 {
            issues.push(ConfigIssue::new(
                format!("{prefix}.batch_size"),
                "must be at least 1",
            ));
        }
        if self.sample_bytes == 0 {
            issues.push(ConfigIssue::new(
                format!("{prefix}.sample_bytes"),
                "must be at least 1",
            ));
        }
        if let Some(d) = self.deadline_s {
            if !(d.is_finite() && d > 0.0) {
                issues.push(ConfigIssue::new(
                    format!("{prefix}.deadline_s"),
                    "must be positive",
                ));
            }
        }
        if !(self.compression_ratio.is_finite() && self.compression_ratio > 0.0) {
            issues.push(ConfigIssue::new(
                format!("{prefix}.compression_ratio"),
                "must be positive",
            ));
        }
        issues
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_us: i64,
    pub value: f64,
}

/// Samples waiting for an uplink. `generation` changes on every flush so a
/// stale deadline timer can be recognised.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBuffer {
    pub samples: Vec<Sample>,
    pub generation: u64,
}

impl SampleBuffer {
    pub fn oldest_us(&self) -> Option<i64> {
        self.samples.first().map(|s| s.t_us)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UplinkRequest {
    pub samples: usize,
    pub payload_len: usize,
    pub oldest_us: i64,
}

fn flush(policy: &AccumulationPolicy, buffer: &mut SampleBuffer) -> Option<UplinkRequest> {
    let oldest_us = buffer.oldest_us()?;
    let samples = buffer.samples.len();
    buffer.samples.clear();
    buffer.generation += 1;
    Some(UplinkRequest {
        samples,
        payload_len: policy.payload_len(samples),
        oldest_us,
    })
}

pub fn offer_sample(
    policy: &AccumulationPolicy,
    mut buffer: SampleBuffer,
    sample: Sample,
) -> (SampleBuffer, Option<UplinkRequest>) {
    debug_assert!(buffer.len() < policy.batch_size);
    buffer.samples.push(sample);
    let full = buffer.len() >= policy.batch_size;
    let overdue = match (policy.deadline_s, buffer.oldest_us()) {
        (Some(d), Some(oldest)) => sample.t_us - oldest >= to_micros(d),
        _ => false,
    };
    let request = if full || overdue {
        flush(policy, &mut buffer)
    } else {
        None
    };
    (buffer, request)
}

/// Deadline timer: flushes when the buffer still holds the generation the
/// timer was armed for.
pub fn flush_on_deadline(
    policy: &AccumulationPolicy,
    mut buffer: SampleBuffer,
    armed_generation: u64,
) -> (SampleBuffer, Option<UplinkRequest>) {
    if buffer.generation != armed_generation {
        return (buffer, None);
    }
    let request = flush(policy, &mut buffer);
    (buffer, request)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevanceFilter {
    pub threshold: f64,
    #[serde(default)]
    pub hysteresis: f64,
}

/// Whether the next upward threshold crossing may trigger a send.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterState {
    pub armed: bool,
}

impl Default for FilterState {
    fn default() -> Self {
        FilterState { armed: true }
    }
}

pub fn filter_sample(
    filter: &RelevanceFilter,
    state: FilterState,
    value: f64,
) -> (FilterState, bool) {
    if state.armed {
        if value > filter.threshold {
            (FilterState { armed: false }, true)
        } else {
            (state, false)
        }
    } else if value < filter.threshold - filter.hysteresis {
        (FilterState { armed: true }, false)
    } else {
        (state, false)
    }
}
