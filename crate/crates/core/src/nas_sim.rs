//! Discrete-event simulation of the NAS registration call flow.
//!
//! Many UEs power on inside a short burst window and register with a single
//! AMF across a fixed path:
//!
//! ```text
//! UE                                   AMF
//!  |-- RegistrationRequest ------------>|  (T3510 starts on the UE)
//!  |<------------ AuthenticationRequest-|  (T3560 starts on the AMF)
//!  |-- AuthenticationResponse --------->|
//!  |<--------------- RegistrationAccept-|  (T3550 starts; T3510 stops on receipt)
//!  |-- RegistrationComplete ----------->|
//! ```
//!
//! The AMF is one FIFO server with exponential service times. Every uplink
//! NAS message and every Poisson background job takes one service; the
//! downlink reply leaves as soon as the triggering uplink message finishes
//! service, and AMF-side watchdogs stop at that same instant. Relay nodes on
//! the path add their fixed aggregated delay. Each transmission is lost
//! independently with the configured probability.
//!
//! A run is single threaded and fully determined by its inputs: power-on
//! instants, losses, service times and background arrivals each draw from
//! their own seed-derived stream.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timer_model::{ModelError, NodeLoadProfile, PathSpec, SizedTimerSuite};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid timer {name}: {value} s")]
    Timer { name: &'static str, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    /// Watts drawn while a registration attempt is in flight.
    pub p_active: f64,
    /// Watts drawn while backing off between attempts.
    pub p_idle: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            p_active: 1.0,
            p_idle: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_ues: usize,
    pub loss_probability: f64,
    pub max_attempts: u32,
    /// Only `service_rate` drives the simulated AMF; the rest describes the
    /// load the operator expects and is what timer sizing consumes.
    pub amf: NodeLoadProfile,
    /// UEs power on uniformly inside `[0, burst_window]`.
    pub burst_window: f64,
    /// Background jobs arrive at this fraction of the AMF service rate.
    pub background_load_fraction: f64,
    /// Retransmissions allowed per AMF watchdog before the AMF aborts.
    pub nas_retransmit_limit: u32,
    /// UE-side processing delay added before each uplink reply.
    pub ue_processing_delay: f64,
    pub energy: EnergyModel,
    pub horizon: f64,
    pub seed: u64,
    /// Post-failure wait. Carried for completeness; a UE that exhausts its
    /// attempts is terminal and no T3502 wait is simulated.
    pub t3502: Option<f64>,
    /// Period of AMF queue-length samples in the trace.
    pub queue_sample_interval: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_ues: 1,
            loss_probability: 0.0,
            max_attempts: 5,
            amf: NodeLoadProfile {
                service_rate: 100.0,
                steady_arrival: 80.0,
                total_arrival: 80.0,
                burst_window: 1e-3,
            },
            burst_window: 1e-3,
            background_load_fraction: 0.8,
            nas_retransmit_limit: 4,
            ue_processing_delay: 0.0,
            energy: EnergyModel::default(),
            horizon: 3600.0,
            seed: 0,
            t3502: Some(12.0 * 60.0),
            queue_sample_interval: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return err(format!(
                "loss probability {} outside [0, 1]",
                self.loss_probability
            ));
        }
        if self.max_attempts == 0 {
            return err("max_attempts must be at least 1".into());
        }
        self.amf.validate()?;
        if !(0.0..1.0).contains(&self.background_load_fraction) {
            return err(format!(
                "background load fraction {} outside [0, 1)",
                self.background_load_fraction
            ));
        }
        if !(self.burst_window.is_finite() && self.burst_window >= 0.0) {
            return err(format!("burst window {} must be >= 0", self.burst_window));
        }
        if !(self.ue_processing_delay.is_finite() && self.ue_processing_delay >= 0.0) {
            return err(format!(
                "UE processing delay {} must be >= 0",
                self.ue_processing_delay
            ));
        }
        if !(self.horizon > 0.0) {
            return err(format!("horizon {} must be positive", self.horizon));
        }
        if !(self.queue_sample_interval > 0.0) {
            return err(format!(
                "queue sample interval {} must be positive",
                self.queue_sample_interval
            ));
        }
        let e = self.energy;
        if !(e.p_active >= 0.0 && e.p_idle >= 0.0 && e.p_active.is_finite() && e.p_idle.is_finite())
        {
            return err("energy powers must be finite and nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimerName {
    T3510,
    T3511,
    T3550,
    T3560,
}

impl TimerName {
    pub const ALL: [TimerName; 4] = [
        TimerName::T3510,
        TimerName::T3511,
        TimerName::T3550,
        TimerName::T3560,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TimerName::T3510 => "T3510",
            TimerName::T3511 => "T3511",
            TimerName::T3550 => "T3550",
            TimerName::T3560 => "T3560",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NasMessageKind {
    RegistrationRequest,
    AuthenticationRequest,
    AuthenticationResponse,
    RegistrationAccept,
    RegistrationComplete,
}

impl NasMessageKind {
    pub fn is_uplink(&self) -> bool {
        matches!(
            self,
            NasMessageKind::RegistrationRequest
                | NasMessageKind::AuthenticationResponse
                | NasMessageKind::RegistrationComplete
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NasMessage {
    pub kind: NasMessageKind,
    pub ue: u32,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    MessageArrival(NasMessage),
    ServiceComplete,
    TimerExpiry {
        ue: u32,
        timer: TimerName,
        generation: u64,
    },
    UePowerOn(u32),
    BackgroundArrival,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.sequence.cmp(&other.sequence))
    }
}

/// Min-queue of events keyed on (time, insertion sequence).
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    next_sequence: u64,
}

impl EventQueue {
    pub fn schedule(&mut self, time: f64, kind: EventKind) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(SimEvent {
            time,
            sequence,
            kind,
        }));
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UeState {
    Off,
    Registering,
    Backoff,
    Registered,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Registered,
    Failed,
    /// Still in progress (or never powered on) when the horizon hit.
    Censored,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Registered => "registered",
            Outcome::Failed => "failed",
            Outcome::Censored => "censored",
        }
    }
}

#[derive(Debug, Clone)]
struct UeFsm {
    state: UeState,
    attempts_used: u32,
    power_on_time: f64,
    /// T3510 or T3511, whichever is running, plus its generation.
    timer: Option<(TimerName, u64)>,
    phase_start: f64,
    active_time: f64,
    idle_time: f64,
    accepted_at: Option<f64>,
    registration_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AmfPhase {
    AwaitingAuthResponse,
    AwaitingComplete,
}

#[derive(Debug, Clone)]
struct AmfProcedure {
    attempt: u32,
    phase: AmfPhase,
    timer_generation: u64,
    retransmits: u32,
}

/// AMF-side per-UE bookkeeping.
#[derive(Debug, Clone, Default)]
struct AmfContext {
    procedure: Option<AmfProcedure>,
    /// Highest attempt the UE has abandoned; later traffic for it is stale.
    closed_attempt: u32,
}

#[derive(Debug, Clone, Copy)]
enum Job {
    Nas(NasMessage),
    Background { arrived: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimerTransition {
    Started,
    Stopped,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimerEvent {
    pub time: f64,
    pub ue: u32,
    pub timer: TimerName,
    pub transition: TimerTransition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeRecord {
    pub ue: u32,
    pub outcome: Outcome,
    pub attempts: u32,
    pub power_on_time: f64,
    /// Power-on until the AMF has served Registration Complete, or until the
    /// UE got Registration Accept if no Complete ever made it through. Only
    /// for registered UEs.
    pub registration_time: Option<f64>,
    pub active_time: f64,
    pub idle_time: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub time: f64,
    pub length: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AmfStats {
    pub nas_served: u64,
    /// NAS messages served but discarded (abandoned attempt or wrong phase).
    pub stale_served: u64,
    pub background_served: u64,
    pub mean_background_sojourn: f64,
    pub max_queue_length: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub transmissions: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    pub num_ues: usize,
    pub loss_probability: f64,
    pub ues: Vec<UeRecord>,
    pub timer_events: Vec<TimerEvent>,
    pub queue_samples: Vec<QueueSample>,
    pub amf: AmfStats,
    pub link: LinkStats,
    pub horizon_exceeded: bool,
    pub end_time: f64,
}

impl RunTrace {
    /// (started, stopped, expired) for one timer.
    pub fn timer_counts(&self, timer: TimerName) -> (u64, u64, u64) {
        let mut counts = (0, 0, 0);
        for e in self.timer_events.iter().filter(|e| e.timer == timer) {
            match e.transition {
                TimerTransition::Started => counts.0 += 1,
                TimerTransition::Stopped => counts.1 += 1,
                TimerTransition::Expired => counts.2 += 1,
            }
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

/// Timer values in seconds, checked positive.
#[derive(Debug, Clone, Copy)]
struct TimerValues {
    t3510: f64,
    t3511: f64,
    t3550: f64,
    t3560: f64,
}

impl TimerValues {
    fn from_suite(s: &SizedTimerSuite) -> Result<Self, SimError> {
        let check = |name: &'static str, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(value)
            } else {
                Err(SimError::Timer { name, value })
            }
        };
        Ok(TimerValues {
            t3510: check("T3510", s.t3510.value)?,
            t3511: check("T3511", s.t3511.value)?,
            t3550: check("T3550", s.t3550.value)?,
            t3560: check("T3560", s.t3560.value)?,
        })
    }

    fn get(&self, t: TimerName) -> f64 {
        match t {
            TimerName::T3510 => self.t3510,
            TimerName::T3511 => self.t3511,
            TimerName::T3550 => self.t3550,
            TimerName::T3560 => self.t3560,
        }
    }
}

// Stream ids for the per-concern RNGs.
const STREAM_POWER_ON: u64 = 1;
const STREAM_LOSS: u64 = 2;
const STREAM_SERVICE: u64 = 3;
const STREAM_BACKGROUND: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

enum StopRule {
    UesDone,
    BackgroundServed(u64),
}

struct Simulation<'a> {
    cfg: &'a SimConfig,
    timers: TimerValues,
    one_way: f64,
    now: f64,
    events: EventQueue,
    ues: Vec<UeFsm>,
    amf: Vec<AmfContext>,
    queue: VecDeque<Job>,
    busy: bool,
    service: Exp<f64>,
    interarrival: Option<Exp<f64>>,
    rng_power: ChaCha8Rng,
    rng_loss: ChaCha8Rng,
    rng_service: ChaCha8Rng,
    rng_background: ChaCha8Rng,
    next_generation: u64,
    running_amf_timers: usize,
    unfinished_ues: usize,
    timer_events: Vec<TimerEvent>,
    queue_samples: Vec<QueueSample>,
    next_sample: f64,
    stats: AmfStats,
    background_sojourn_sum: f64,
    link: LinkStats,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a SimConfig, timers: TimerValues, one_way: f64) -> Result<Self, SimError> {
        let mu = cfg.amf.service_rate;
        let service = Exp::new(mu).map_err(|e| SimError::Config(format!("service rate: {e}")))?;
        let bg_rate = cfg.background_load_fraction * mu;
        let interarrival = if bg_rate > 0.0 {
            Some(Exp::new(bg_rate).map_err(|e| SimError::Config(format!("background rate: {e}")))?)
        } else {
            None
        };
        let idle_ue = UeFsm {
            state: UeState::Off,
            attempts_used: 0,
            power_on_time: 0.0,
            timer: None,
            phase_start: 0.0,
            active_time: 0.0,
            idle_time: 0.0,
            accepted_at: None,
            registration_time: None,
        };
        Ok(Simulation {
            cfg,
            timers,
            one_way,
            now: 0.0,
            events: EventQueue::default(),
            ues: vec![idle_ue; cfg.num_ues],
            amf: vec![AmfContext::default(); cfg.num_ues],
            queue: VecDeque::new(),
            busy: false,
            service,
            interarrival,
            rng_power: stream(cfg.seed, STREAM_POWER_ON),
            rng_loss: stream(cfg.seed, STREAM_LOSS),
            rng_service: stream(cfg.seed, STREAM_SERVICE),
            rng_background: stream(cfg.seed, STREAM_BACKGROUND),
            next_generation: 0,
            running_amf_timers: 0,
            unfinished_ues: cfg.num_ues,
            timer_events: Vec::new(),
            queue_samples: Vec::new(),
            next_sample: 0.0,
            stats: AmfStats::default(),
            background_sojourn_sum: 0.0,
            link: LinkStats::default(),
        })
    }

    fn schedule_power_on(&mut self) {
        for ue in 0..self.cfg.num_ues {
            let t = self.rng_power.random::<f64>() * self.cfg.burst_window;
            self.events.schedule(t, EventKind::UePowerOn(ue as u32));
        }
    }

    fn schedule_background(&mut self) {
        if let Some(dist) = self.interarrival {
            let dt = dist.sample(&mut self.rng_background);
            self.events
                .schedule(self.now + dt, EventKind::BackgroundArrival);
        }
    }

    fn run(mut self, stop: StopRule) -> RunTrace {
        self.schedule_power_on();
        self.schedule_background();
        let mut horizon_exceeded = false;
        loop {
            let done = match stop {
                StopRule::UesDone => self.unfinished_ues == 0 && self.running_amf_timers == 0,
                StopRule::BackgroundServed(n) => self.stats.background_served >= n,
            };
            if done {
                break;
            }
            let Some(event) = self.events.pop() else {
                break;
            };
            if event.time > self.cfg.horizon {
                horizon_exceeded = self.unfinished_ues > 0;
                self.now = self.cfg.horizon;
                break;
            }
            self.now = event.time;
            self.sample_queue();
            self.dispatch(event.kind);
        }
        self.finish(horizon_exceeded)
    }

    fn sample_queue(&mut self) {
        while self.next_sample <= self.now {
            self.queue_samples.push(QueueSample {
                time: self.next_sample,
                length: self.queue.len(),
            });
            self.next_sample += self.cfg.queue_sample_interval;
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::UePowerOn(ue) => self.power_on(ue),
            EventKind::BackgroundArrival => {
                self.enqueue(Job::Background { arrived: self.now });
                self.schedule_background();
            }
            EventKind::MessageArrival(msg) => {
                if msg.kind.is_uplink() {
                    self.enqueue(Job::Nas(msg));
                } else {
                    self.ue_receive(msg);
                }
            }
            EventKind::ServiceComplete => self.service_complete(),
            EventKind::TimerExpiry {
                ue,
                timer,
                generation,
            } => self.on_timer_expiry(ue, timer, generation),
        }
    }

    // --- transport -----------------------------------------------------

    /// Sends one message across the path, possibly losing it.
    fn deliver(&mut self, msg: NasMessage, extra_delay: f64) {
        self.link.transmissions += 1;
        if self.rng_loss.random::<f64>() < self.cfg.loss_probability {
            self.link.dropped += 1;
            return;
        }
        self.events.schedule(
            self.now + extra_delay + self.one_way,
            EventKind::MessageArrival(msg),
        );
    }

    fn send_uplink(&mut self, kind: NasMessageKind, ue: u32, attempt: u32) {
        self.deliver(
            NasMessage { kind, ue, attempt },
            self.cfg.ue_processing_delay,
        );
    }

    fn send_downlink(&mut self, kind: NasMessageKind, ue: u32, attempt: u32) {
        self.deliver(NasMessage { kind, ue, attempt }, 0.0);
    }

    // --- AMF server ----------------------------------------------------

    fn enqueue(&mut self, job: Job) {
        self.queue.push_back(job);
        self.stats.max_queue_length = self.stats.max_queue_length.max(self.queue.len());
        if !self.busy {
            self.start_service();
        }
    }

    fn start_service(&mut self) {
        if self.queue.is_empty() {
            self.busy = false;
            return;
        }
        self.busy = true;
        let dt = self.service.sample(&mut self.rng_service);
        self.events
            .schedule(self.now + dt, EventKind::ServiceComplete);
    }

    fn service_complete(&mut self) {
        let job = self
            .queue
            .pop_front()
            .expect("service completion with empty queue");
        match job {
            Job::Background { arrived } => {
                self.stats.background_served += 1;
                self.background_sojourn_sum += self.now - arrived;
            }
            Job::Nas(msg) => {
                self.stats.nas_served += 1;
                if !self.amf_handle(msg) {
                    self.stats.stale_served += 1;
                }
            }
        }
        self.start_service();
    }

    /// Returns false when the message was stale and discarded.
    fn amf_handle(&mut self, msg: NasMessage) -> bool {
        let ue = msg.ue as usize;
        if msg.attempt <= self.amf[ue].closed_attempt {
            return false;
        }
        match msg.kind {
            NasMessageKind::RegistrationRequest => {
                if let Some(p) = &self.amf[ue].procedure {
                    if p.attempt >= msg.attempt {
                        return false;
                    }
                    self.abort_amf_procedure(msg.ue);
                }
                let generation = self.start_timer(msg.ue, TimerName::T3560);
                self.running_amf_timers += 1;
                self.amf[ue].procedure = Some(AmfProcedure {
                    attempt: msg.attempt,
                    phase: AmfPhase::AwaitingAuthResponse,
                    timer_generation: generation,
                    retransmits: 0,
                });
                self.send_downlink(NasMessageKind::AuthenticationRequest, msg.ue, msg.attempt);
                true
            }
            NasMessageKind::AuthenticationResponse => {
                if !self.procedure_matches(ue, msg.attempt, AmfPhase::AwaitingAuthResponse) {
                    return false;
                }
                self.record(msg.ue, TimerName::T3560, TimerTransition::Stopped);
                let generation = self.start_timer(msg.ue, TimerName::T3550);
                let p = self.amf[ue].procedure.as_mut().expect("matched procedure");
                p.phase = AmfPhase::AwaitingComplete;
                p.timer_generation = generation;
                p.retransmits = 0;
                self.send_downlink(NasMessageKind::RegistrationAccept, msg.ue, msg.attempt);
                true
            }
            NasMessageKind::RegistrationComplete => {
                if !self.procedure_matches(ue, msg.attempt, AmfPhase::AwaitingComplete) {
                    return false;
                }
                self.record(msg.ue, TimerName::T3550, TimerTransition::Stopped);
                let fsm = &mut self.ues[ue];
                fsm.registration_time = Some(self.now - fsm.power_on_time);
                self.amf[ue].procedure = None;
                self.running_amf_timers -= 1;
                true
            }
            _ => unreachable!("downlink message queued at the AMF"),
        }
    }

    fn procedure_matches(&self, ue: usize, attempt: u32, phase: AmfPhase) -> bool {
        matches!(&self.amf[ue].procedure, Some(p) if p.attempt == attempt && p.phase == phase)
    }

    /// Drops the AMF procedure, stopping its watchdog.
    fn abort_amf_procedure(&mut self, ue: u32) {
        if let Some(p) = self.amf[ue as usize].procedure.take() {
            let timer = match p.phase {
                AmfPhase::AwaitingAuthResponse => TimerName::T3560,
                AmfPhase::AwaitingComplete => TimerName::T3550,
            };
            self.record(ue, timer, TimerTransition::Stopped);
            self.running_amf_timers -= 1;
        }
    }

    // --- UE side -------------------------------------------------------

    fn power_on(&mut self, ue: u32) {
        let fsm = &mut self.ues[ue as usize];
        fsm.power_on_time = self.now;
        self.begin_attempt(ue);
    }

    fn begin_attempt(&mut self, ue: u32) {
        let now = self.now;
        let fsm = &mut self.ues[ue as usize];
        fsm.attempts_used += 1;
        fsm.state = UeState::Registering;
        fsm.phase_start = now;
        let attempt = fsm.attempts_used;
        let generation = self.start_timer(ue, TimerName::T3510);
        self.ues[ue as usize].timer = Some((TimerName::T3510, generation));
        self.send_uplink(NasMessageKind::RegistrationRequest, ue, attempt);
    }

    fn ue_receive(&mut self, msg: NasMessage) {
        let fsm = &self.ues[msg.ue as usize];
        if msg.attempt != fsm.attempts_used {
            return;
        }
        match (msg.kind, fsm.state) {
            (NasMessageKind::AuthenticationRequest, UeState::Registering) => {
                self.send_uplink(NasMessageKind::AuthenticationResponse, msg.ue, msg.attempt);
            }
            (NasMessageKind::RegistrationAccept, UeState::Registering) => {
                self.stop_ue_timer(msg.ue);
                self.close_phase(msg.ue);
                let now = self.now;
                let fsm = &mut self.ues[msg.ue as usize];
                fsm.state = UeState::Registered;
                fsm.accepted_at = Some(now - fsm.power_on_time);
                self.unfinished_ues -= 1;
                self.send_uplink(NasMessageKind::RegistrationComplete, msg.ue, msg.attempt);
            }
            // retransmitted accept after the first one already got through
            (NasMessageKind::RegistrationAccept, UeState::Registered) => {
                self.send_uplink(NasMessageKind::RegistrationComplete, msg.ue, msg.attempt);
            }
            _ => {}
        }
    }

    /// Folds the time spent in the current phase into the energy accumulators.
    fn close_phase(&mut self, ue: u32) {
        let now = self.now;
        let fsm = &mut self.ues[ue as usize];
        let spent = now - fsm.phase_start;
        match fsm.state {
            UeState::Registering => fsm.active_time += spent,
            UeState::Backoff => fsm.idle_time += spent,
            _ => {}
        }
        fsm.phase_start = now;
    }

    fn stop_ue_timer(&mut self, ue: u32) {
        if let Some((name, _)) = self.ues[ue as usize].timer.take() {
            self.record(ue, name, TimerTransition::Stopped);
        }
    }

    // --- timers --------------------------------------------------------

    fn start_timer(&mut self, ue: u32, timer: TimerName) -> u64 {
        let generation = self.next_generation;
        self.next_generation += 1;
        self.record(ue, timer, TimerTransition::Started);
        self.events.schedule(
            self.now + self.timers.get(timer),
            EventKind::TimerExpiry {
                ue,
                timer,
                generation,
            },
        );
        generation
    }

    fn record(&mut self, ue: u32, timer: TimerName, transition: TimerTransition) {
        self.timer_events.push(TimerEvent {
            time: self.now,
            ue,
            timer,
            transition,
        });
    }

    fn on_timer_expiry(&mut self, ue: u32, timer: TimerName, generation: u64) {
        match timer {
            TimerName::T3510 | TimerName::T3511 => {
                if self.ues[ue as usize].timer != Some((timer, generation)) {
                    return;
                }
                self.ues[ue as usize].timer = None;
                self.record(ue, timer, TimerTransition::Expired);
                if timer == TimerName::T3510 {
                    self.t3510_expired(ue);
                } else {
                    self.close_phase(ue);
                    self.begin_attempt(ue);
                }
            }
            TimerName::T3550 | TimerName::T3560 => {
                let live = matches!(
                    &self.amf[ue as usize].procedure,
                    Some(p) if p.timer_generation == generation
                );
                if !live {
                    return;
                }
                self.record(ue, timer, TimerTransition::Expired);
                self.amf_watchdog_expired(ue, timer);
            }
        }
    }

    fn t3510_expired(&mut self, ue: u32) {
        self.close_phase(ue);
        let attempt = self.ues[ue as usize].attempts_used;
        // The UE releases the signaling connection; the AMF forgets the attempt.
        let ctx = &mut self.amf[ue as usize];
        ctx.closed_attempt = ctx.closed_attempt.max(attempt);
        if matches!(&ctx.procedure, Some(p) if p.attempt <= attempt) {
            self.abort_amf_procedure(ue);
        }
        if attempt < self.cfg.max_attempts {
            self.ues[ue as usize].state = UeState::Backoff;
            let generation = self.start_timer(ue, TimerName::T3511);
            self.ues[ue as usize].timer = Some((TimerName::T3511, generation));
        } else {
            self.ues[ue as usize].state = UeState::Failed;
            self.unfinished_ues -= 1;
        }
    }

    fn amf_watchdog_expired(&mut self, ue: u32, timer: TimerName) {
        let limit = self.cfg.nas_retransmit_limit;
        let p = self.amf[ue as usize]
            .procedure
            .as_ref()
            .expect("live procedure");
        if p.retransmits >= limit {
            self.amf[ue as usize].procedure = None;
            self.running_amf_timers -= 1;
            return;
        }
        let attempt = p.attempt;
        let generation = self.start_timer(ue, timer);
        let p = self.amf[ue as usize]
            .procedure
            .as_mut()
            .expect("live procedure");
        p.retransmits += 1;
        p.timer_generation = generation;
        let kind = match timer {
            TimerName::T3560 => NasMessageKind::AuthenticationRequest,
            _ => NasMessageKind::RegistrationAccept,
        };
        self.send_downlink(kind, ue, attempt);
    }

    // --- wrap up -------------------------------------------------------

    fn finish(mut self, horizon_exceeded: bool) -> RunTrace {
        // Timers still running at the cutoff are closed as stopped.
        for ue in 0..self.ues.len() as u32 {
            if matches!(
                self.ues[ue as usize].state,
                UeState::Registering | UeState::Backoff
            ) {
                self.close_phase(ue);
            }
            self.stop_ue_timer(ue);
            if self.amf[ue as usize].procedure.is_some() {
                self.abort_amf_procedure(ue);
            }
        }
        let energy = self.cfg.energy;
        let ues = self
            .ues
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let outcome = match u.state {
                    UeState::Registered => Outcome::Registered,
                    UeState::Failed => Outcome::Failed,
                    _ => Outcome::Censored,
                };
                UeRecord {
                    ue: i as u32,
                    outcome,
                    attempts: u.attempts_used,
                    power_on_time: u.power_on_time,
                    registration_time: match u.state {
                        UeState::Registered => u.registration_time.or(u.accepted_at),
                        _ => None,
                    },
                    active_time: u.active_time,
                    idle_time: u.idle_time,
                    energy: energy.p_active * u.active_time + energy.p_idle * u.idle_time,
                }
            })
            .collect();
        let mut amf = self.stats;
        if amf.background_served > 0 {
            amf.mean_background_sojourn =
                self.background_sojourn_sum / amf.background_served as f64;
        }
        RunTrace {
            seed: self.cfg.seed,
            num_ues: self.cfg.num_ues,
            loss_probability: self.cfg.loss_probability,
            ues,
            timer_events: self.timer_events,
            queue_samples: self.queue_samples,
            amf,
            link: self.link,
            horizon_exceeded,
            end_time: self.now,
        }
    }
}

/// Runs one registration storm to completion (or to the horizon).
pub fn run_scenario(
    config: &SimConfig,
    timers: &SizedTimerSuite,
    path: &PathSpec,
) -> Result<RunTrace, SimError> {
    config.validate()?;
    let timers = TimerValues::from_suite(timers)?;
    let one_way = path.one_way_transit()?;
    Ok(Simulation::new(config, timers, one_way)?.run(StopRule::UesDone))
}

/// Statistics of the AMF queue fed by background traffic alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    pub jobs: u64,
    pub mean_sojourn: f64,
    pub max_queue_length: usize,
}

/// Drives the AMF server with Poisson background arrivals only until `jobs`
/// have been served.
pub fn run_background_only(
    service_rate: f64,
    arrival_rate: f64,
    jobs: u64,
    seed: u64,
) -> Result<QueueStats, SimError> {
    if !(arrival_rate > 0.0 && arrival_rate < service_rate) {
        return Err(SimError::Config(format!(
            "need 0 < arrival rate ({arrival_rate}) < service rate ({service_rate})"
        )));
    }
    let config = SimConfig {
        num_ues: 0,
        amf: NodeLoadProfile::steady(service_rate, arrival_rate)?,
        background_load_fraction: arrival_rate / service_rate,
        horizon: f64::INFINITY,
        queue_sample_interval: f64::INFINITY,
        seed,
        ..SimConfig::default()
    };
    let timers = TimerValues {
        t3510: 1.0,
        t3511: 1.0,
        t3550: 1.0,
        t3560: 1.0,
    };
    let trace = Simulation::new(&config, timers, 0.0)?.run(StopRule::BackgroundServed(jobs));
    Ok(QueueStats {
        jobs: trace.amf.background_served,
        mean_sojourn: trace.amf.mean_background_sojourn,
        max_queue_length: trace.amf.max_queue_length,
    })
}
