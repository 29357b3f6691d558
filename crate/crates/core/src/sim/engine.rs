use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::report::{EventLog, SimReport};
use super::scenario::{AckModel, EventLogMode, Scenario, SnrModel};
use crate::adr::{
    adr_decision, required_snr, AdrAckCounter, AdrState, LinkSettings, UplinkObservation,
};
use crate::energy::{EnergyLedger, Load, PowerState, RxWindowCalibration, Segment};
use crate::error::{Error, Result};
use crate::mac::{
    plan_uplink, retransmit_policy, AckPlan, DutyCycleState, MacContext, RetryDecision,
    UplinkAttempt,
};
use crate::phy::to_micros;
use crate::strategy::{
    filter_sample, flush_on_deadline, next_wake, offer_sample, EventStream, FilterState, Sample,
    SampleBuffer, SensingMode, UplinkRequest, WakeAction,
};

const STREAM_EVENTS: u64 = 1;
const STREAM_ACK: u64 = 2;
const STREAM_SNR: u64 = 3;

// Same-instant ordering: MAC work before strategy work, then FIFO.
const CLASS_MAC: u8 = 0;
const CLASS_STRATEGY: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    TxAttempt,
    Wake(WakeAction),
    Deadline { generation: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Queued {
    t_us: i64,
    class: u8,
    seq: u64,
    kind: EventKind,
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.t_us, self.class, self.seq).cmp(&(other.t_us, other.class, other.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    id: u64,
    request: UplinkRequest,
    retries_used: u32,
}

enum SnrSource {
    Trace {
        values: Vec<f64>,
        next: usize,
    },
    Normal {
        rng: Box<ChaCha8Rng>,
        dist: Normal<f64>,
    },
}

impl SnrSource {
    fn next(&mut self) -> f64 {
        match self {
            SnrSource::Trace { values, next } => {
                let v = values[*next % values.len()];
                *next += 1;
                v
            }
            SnrSource::Normal { rng, dist } => dist.sample(rng.as_mut()),
        }
    }
}

struct Adr {
    state: AdrState,
    counter: AdrAckCounter,
    snr: SnrSource,
    gateway_count: u32,
}

struct Battery {
    capacity_c: f64,
    used_c: f64,
    self_discharge_a: f64,
    depleted_at_us: Option<i64>,
}

/// Runs a scenario to completion and returns its report.
pub fn run(scenario: &Scenario) -> Result<SimReport> {
    let calibration = scenario.validate()?;
    Engine::new(scenario, &calibration)?.run()
}

/// Like [`run`] with the scenario seed replaced.
pub fn run_with_seed(scenario: &Scenario, seed: u64) -> Result<SimReport> {
    let mut s = scenario.clone();
    s.seed = Some(seed);
    run(&s)
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

struct Engine<'a> {
    sc: &'a Scenario,
    calibration: &'a RxWindowCalibration,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    cursor_us: i64,
    horizon_us: Option<i64>,
    ledger: EnergyLedger,
    state_time_us: [i64; 5],
    log: EventLog,
    battery: Battery,
    events: EventStream,
    ack_rng: ChaCha8Rng,
    buffer: SampleBuffer,
    filter: FilterState,
    duty: DutyCycleState,
    pending: VecDeque<Pending>,
    in_flight: bool,
    link: LinkSettings,
    adr: Option<Adr>,
    report: SimReport,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, calibration: &'a RxWindowCalibration) -> Result<Self> {
        let seed = sc.seed.unwrap_or(0);
        let rate = match sc.sensing {
            SensingMode::Interrupt {
                event_rate_per_hour,
                ..
            } => event_rate_per_hour,
            SensingMode::Poll { .. } => 0.0,
        };
        let adr = if sc.adr.enabled {
            let snr = match sc.adr.snr.clone() {
                Some(SnrModel::Trace { values }) => SnrSource::Trace { values, next: 0 },
                Some(SnrModel::Normal { mean_db, sigma_db }) => SnrSource::Normal {
                    rng: Box::new(rng(seed, STREAM_SNR)),
                    dist: Normal::new(mean_db, sigma_db)
                        .map_err(|e| Error::param("adr.snr", e.to_string()))?,
                },
                None => return Err(Error::param("adr.snr", "missing")),
            };
            Some(Adr {
                state: AdrState::new(sc.adr.rule),
                counter: AdrAckCounter::default(),
                snr,
                gateway_count: sc.adr.gateway_count,
            })
        } else {
            None
        };
        let link = LinkSettings {
            dr: sc.radio.dr,
            tx_power_dbm: sc.radio.tx_power_dbm,
        };
        Ok(Engine {
            sc,
            calibration,
            queue: BinaryHeap::new(),
            seq: 0,
            cursor_us: 0,
            horizon_us: sc.duration_s.map(to_micros),
            ledger: EnergyLedger::default(),
            state_time_us: [0; 5],
            log: EventLog::new(sc.event_log.max_rows),
            battery: Battery {
                capacity_c: sc.battery.capacity_mah * 3.6,
                used_c: 0.0,
                self_discharge_a: sc.battery.self_discharge_a,
                depleted_at_us: None,
            },
            events: EventStream::new(rng(seed, STREAM_EVENTS), rate),
            ack_rng: rng(seed, STREAM_ACK),
            buffer: SampleBuffer::default(),
            filter: FilterState::default(),
            duty: DutyCycleState::new(sc.mac.duty_cycle_limit),
            pending: VecDeque::new(),
            in_flight: false,
            link,
            adr,
            report: SimReport::empty(sc, link),
        })
    }

    fn schedule(&mut self, t_us: i64, class: u8, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            t_us,
            class,
            seq: self.seq,
            kind,
        }));
    }

    fn dead(&self) -> bool {
        self.battery.depleted_at_us.is_some()
    }

    fn run(mut self) -> Result<SimReport> {
        if let Some((t, action)) = next_wake(&self.sc.sensing, 0, &mut self.events) {
            self.schedule(t, CLASS_STRATEGY, EventKind::Wake(action));
        }
        loop {
            let next = self.queue.peek().map(|Reverse(q)| *q);
            match next {
                Some(ev) if self.horizon_us.is_none_or(|h| ev.t_us < h) => {
                    self.queue.pop();
                    if ev.t_us > self.cursor_us {
                        self.sleep_until(ev.t_us)?;
                        if self.dead() {
                            break;
                        }
                    }
                    self.handle(ev)?;
                    if self.dead() {
                        break;
                    }
                }
                _ => {
                    match self.horizon_us {
                        Some(h) => {
                            if h > self.cursor_us {
                                self.sleep_until(h)?;
                            }
                        }
                        None => self.sleep_until_depleted()?,
                    }
                    break;
                }
            }
        }
        Ok(self.finish())
    }

    fn handle(&mut self, ev: Queued) -> Result<()> {
        match ev.kind {
            EventKind::Wake(action) => self.on_wake(ev.t_us, action),
            EventKind::Deadline { generation } => {
                let (buffer, request) = flush_on_deadline(
                    &self.sc.accumulation,
                    std::mem::take(&mut self.buffer),
                    generation,
                );
                self.buffer = buffer;
                if let Some(r) = request {
                    self.enqueue(r);
                }
                self.kick_mac()
            }
            EventKind::TxAttempt => self.attempt(),
        }
    }

    fn on_wake(&mut self, t_us: i64, action: WakeAction) -> Result<()> {
        self.report.samples += 1;
        let sense_us = to_micros(self.sc.sensing.sample_duration_s());
        let label = match action {
            WakeAction::PollSample => "sense poll",
            WakeAction::InterruptSample => "sense interrupt",
        };
        self.push_timed(Load::Sense, sense_us, false, || label.to_string())?;
        if self.dead() {
            return Ok(());
        }
        let proc_us = to_micros(self.sc.processing_s_per_sample);
        if proc_us > 0 {
            self.push_timed(Load::Process, proc_us, false, || "process".to_string())?;
            if self.dead() {
                return Ok(());
            }
        }

        let value = self.sc.signal.value_at(t_us);
        // Interrupt sources are already event-driven; only polled values are filtered.
        let relevant = match (action, &self.sc.filter) {
            (WakeAction::PollSample, Some(f)) => {
                let (state, send) = filter_sample(f, self.filter, value);
                self.filter = state;
                send
            }
            _ => true,
        };
        if relevant {
            self.report.relevant_samples += 1;
            let was_empty = self.buffer.is_empty();
            let (buffer, request) = offer_sample(
                &self.sc.accumulation,
                std::mem::take(&mut self.buffer),
                Sample { t_us, value },
            );
            self.buffer = buffer;
            if let Some(r) = request {
                self.enqueue(r);
            } else if was_empty {
                if let Some(d) = self.sc.accumulation.deadline_s {
                    let generation = self.buffer.generation;
                    self.schedule(
                        t_us + to_micros(d),
                        CLASS_STRATEGY,
                        EventKind::Deadline { generation },
                    );
                }
            }
        }
        if let Some((t, a)) = next_wake(&self.sc.sensing, t_us, &mut self.events) {
            self.schedule(t, CLASS_STRATEGY, EventKind::Wake(a));
        }
        self.kick_mac()
    }

    fn enqueue(&mut self, request: UplinkRequest) {
        self.report.uplinks += 1;
        self.pending.push_back(Pending {
            id: self.report.uplinks,
            request,
            retries_used: 0,
        });
    }

    fn kick_mac(&mut self) -> Result<()> {
        if self.in_flight || self.pending.is_empty() || self.dead() {
            return Ok(());
        }
        self.in_flight = true;
        self.attempt()
    }

    fn draw_ack(&mut self) -> AckPlan {
        match self.sc.uplink.ack {
            AckModel::Fixed { plan } => plan,
            AckModel::Random { p_rx1, p_rx2 } => {
                let u: f64 = self.ack_rng.random();
                if u < p_rx1 {
                    AckPlan::Rx1
                } else if u < p_rx1 + p_rx2 {
                    AckPlan::Rx2
                } else {
                    AckPlan::None
                }
            }
        }
    }

    /// Sends the head of the uplink queue now, or reschedules it for when the
    /// duty cycle allows.
    fn attempt(&mut self) -> Result<()> {
        let head = *self.pending.front().expect("attempt with empty queue");
        let toa_us = to_micros(
            self.sc
                .mac
                .uplink_airtime(self.link.dr, head.request.payload_len)?,
        );
        let start_us = self.duty.next_permitted_time(self.cursor_us, toa_us);
        if start_us > self.cursor_us {
            self.schedule(start_us, CLASS_MAC, EventKind::TxAttempt);
            return Ok(());
        }
        let confirmed = self.sc.uplink.confirmed;
        let ack_plan = if confirmed {
            self.draw_ack()
        } else {
            AckPlan::None
        };
        let attempt = UplinkAttempt {
            dr: self.link.dr,
            tx_power_dbm: self.link.tx_power_dbm,
            payload_len: head.request.payload_len,
            confirmed,
            ack_plan,
            retries_used: head.retries_used,
        };
        let ctx = MacContext {
            config: &self.sc.mac,
            calibration: self.calibration,
            profile: &self.sc.profile,
        };
        let tx = plan_uplink(&ctx, &self.duty, self.cursor_us, &attempt)?;
        debug_assert_eq!(tx.uplink_start_us, self.cursor_us);
        self.duty.record(tx.uplink_start_us, tx.uplink_duration_us);
        let label = format!("u{}.{}", head.id, head.retries_used);
        for seg in tx.segments(&self.sc.profile, &label)? {
            self.push(seg, true);
            if self.dead() {
                return Ok(());
            }
        }
        self.report.transmissions += 1;
        if head.retries_used > 0 {
            self.report.retransmissions += 1;
        }
        if tx.rx_profile_derived {
            self.report.profile_derived_rx += 1;
        }
        let received = self.adr_step(tx.dr, tx.tx_power_dbm, tx.outcome.acknowledged());

        match retransmit_policy(&tx, self.sc.mac.max_retries, self.sc.mac.retry_backoff_s) {
            RetryDecision::Retry {
                at_us,
                retries_used,
            } => {
                self.pending.front_mut().expect("head").retries_used = retries_used;
                self.schedule(at_us, CLASS_MAC, EventKind::TxAttempt);
                Ok(())
            }
            decision => {
                if tx.outcome.acknowledged() || (!confirmed && received) {
                    self.report.delivered += 1;
                    self.report.delivered_samples += head.request.samples as u64;
                } else if decision == RetryDecision::GiveUp {
                    self.report.failed += 1;
                } else {
                    self.report.lost += 1;
                }
                self.pending.pop_front();
                self.in_flight = false;
                self.kick_mac()
            }
        }
    }

    /// Network-side ADR on one uplink. Returns whether a gateway heard it.
    fn adr_step(&mut self, dr: crate::phy::DataRate, power: i8, acked: bool) -> bool {
        let Some(adr) = self.adr.as_mut() else {
            return true;
        };
        let snr_db = adr.snr.next();
        let received = snr_db >= required_snr(dr.spreading_factor());
        let limit = adr.state.config().ack_limit;
        let mut answered = acked;
        if received {
            adr.state.record(UplinkObservation {
                snr_db,
                gateway_count: adr.gateway_count,
                dr,
                tx_power_dbm: power,
            });
            if let Some(next) = adr_decision(&adr.state, self.link) {
                self.report.adr_decisions += 1;
                if next != self.link {
                    self.link = next;
                    self.report.adr_changes += 1;
                    answered = true;
                }
            }
            answered |= adr.counter.requests_answer(limit);
        }
        if adr.counter.on_uplink(answered, limit) {
            if let Some(slower) = self.link.dr.slower() {
                self.link.dr = slower;
                self.report.adr_backoffs += 1;
            }
        }
        received
    }

    fn push_timed(
        &mut self,
        load: Load,
        duration_us: i64,
        transactional: bool,
        detail: impl FnOnce() -> String,
    ) -> Result<()> {
        let energy_j =
            crate::energy::state_energy(&self.sc.profile, load, duration_us as f64 * 1e-6)?;
        let record = self.wants_row(transactional);
        self.push(
            Segment {
                start_us: self.cursor_us,
                duration_us,
                state: load.state(),
                energy_j,
                detail: if record { detail() } else { String::new() },
            },
            transactional,
        );
        Ok(())
    }

    fn wants_row(&self, transactional: bool) -> bool {
        match self.sc.event_log.mode {
            EventLogMode::Full => true,
            EventLogMode::Transactions => transactional,
            EventLogMode::None => false,
        }
    }

    fn sleep_until(&mut self, t_us: i64) -> Result<()> {
        let dur = t_us - self.cursor_us;
        self.push_timed(Load::Sleep, dur, false, || "sleep".to_string())
    }

    fn sleep_until_depleted(&mut self) -> Result<()> {
        let v = self.sc.profile.supply_voltage;
        let amps = self.sc.profile.sleep_current + self.battery.self_discharge_a;
        let remaining = (self.battery.capacity_c - self.battery.used_c).max(0.0);
        let secs = remaining / amps;
        let dur = (secs * 1e6).ceil() + 1.0;
        if dur.is_nan() || dur >= (i64::MAX - self.cursor_us) as f64 {
            return Err(Error::Battery(format!(
                "battery outlasts the simulator's time range ({secs:.3e} s of sleep left at {v} V)"
            )));
        }
        self.sleep_until(self.cursor_us + dur as i64)
    }

    /// Books a segment on the ledger and the battery, truncating it if the
    /// battery runs out part-way.
    fn push(&mut self, mut seg: Segment, transactional: bool) {
        debug_assert_eq!(seg.start_us, self.cursor_us);
        let v = self.sc.profile.supply_voltage;
        let secs = seg.duration_us as f64 * 1e-6;
        let charge = seg.energy_j / v + self.battery.self_discharge_a * secs;
        let left = self.battery.capacity_c - self.battery.used_c;
        if charge >= left && charge > 0.0 {
            let frac = (left / charge).clamp(0.0, 1.0);
            let kept = (seg.duration_us as f64 * frac).floor() as i64;
            seg.energy_j = if seg.duration_us > 0 {
                seg.energy_j * kept as f64 / seg.duration_us as f64
            } else {
                seg.energy_j * frac
            };
            seg.duration_us = kept;
            if !seg.detail.is_empty() {
                seg.detail.push_str(" (battery depleted)");
            }
            self.battery.used_c = self.battery.capacity_c;
            self.battery.depleted_at_us = Some(seg.end_us());
        } else {
            self.battery.used_c += charge;
        }
        self.ledger
            .add(seg.state, seg.energy_j)
            .expect("segment energies are non-negative");
        self.state_time_us[state_index(seg.state)] += seg.duration_us;
        self.cursor_us = seg.end_us();
        if self.wants_row(transactional) {
            self.log.push(seg);
        }
    }

    fn finish(mut self) -> SimReport {
        let r = &mut self.report;
        r.simulated_time_us = self.cursor_us;
        r.battery_depleted = self.battery.depleted_at_us.is_some();
        r.final_link = self.link;
        r.state_time_us = PowerState::ALL
            .iter()
            .map(|&s| (s, self.state_time_us[state_index(s)]))
            .collect();
        r.ledger = self.ledger;
        r.battery_used_c = self.battery.used_c;
        r.queued_uplinks = self.pending.len() as u64;
        r.event_log = self.log;
        r.finalize(self.sc);
        self.report
    }
}

fn state_index(s: PowerState) -> usize {
    PowerState::ALL
        .iter()
        .position(|&x| x == s)
        .expect("known state")
}
