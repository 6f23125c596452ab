//! Simulated transport and time accounting.
//!
//! Time is fully logical: compute segments are priced by a deterministic cost
//! model and transfers by bandwidth/latency arithmetic, so every reported
//! decomposition is identical across runs and platforms. Internally all
//! durations are integer nanoseconds, which makes ledger conservation exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simulated duration/instant in whole nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_secs_f64(secs: f64) -> SimTime {
        assert!(secs >= 0.0 && secs.is_finite(), "bad duration {secs}");
        SimTime((secs * 1e9).round() as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

/// Point-to-point link model. `bandwidth_bps` of `None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub bandwidth_bps: Option<f64>,
    pub latency_s: f64,
}

impl Channel {
    pub fn unlimited() -> Channel {
        Channel {
            bandwidth_bps: None,
            latency_s: 0.0,
        }
    }

    pub fn new(bandwidth_bps: Option<f64>, latency_s: f64) -> Result<Channel> {
        if let Some(b) = bandwidth_bps {
            if !(b > 0.0) {
                return Err(Error::invalid(format!(
                    "bandwidth must be positive, got {b}"
                )));
            }
        }
        if latency_s < 0.0 || !latency_s.is_finite() {
            return Err(Error::invalid("latency must be a nonnegative number"));
        }
        Ok(Channel {
            bandwidth_bps,
            latency_s,
        })
    }

    /// Wall time for one transfer: latency plus serialization time.
    pub fn transfer_time(&self, bytes: usize) -> SimTime {
        let transfer = match self.bandwidth_bps {
            Some(b) => (bytes as f64) * 8.0 / b,
            None => 0.0,
        };
        SimTime::from_secs_f64(self.latency_s + transfer)
    }
}

/// Actors whose time is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Actor {
    Server,
    Client(usize),
}

impl std::fmt::Display for Actor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Actor::Server => write!(f, "server"),
            Actor::Client(i) => write!(f, "client{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucket {
    Train,
    Communicate,
    Encrypt,
    Idle,
    Other,
}

/// Per-actor simulated-time decomposition plus byte counters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ActorLedger {
    pub train: SimTime,
    pub communicate: SimTime,
    pub encrypt: SimTime,
    pub idle: SimTime,
    pub other: SimTime,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl ActorLedger {
    pub fn busy(&self) -> SimTime {
        self.train + self.communicate + self.encrypt + self.other
    }

    pub fn total(&self) -> SimTime {
        self.busy() + self.idle
    }

    pub fn charge(&mut self, bucket: Bucket, t: SimTime) {
        match bucket {
            Bucket::Train => self.train += t,
            Bucket::Communicate => self.communicate += t,
            Bucket::Encrypt => self.encrypt += t,
            Bucket::Idle => self.idle += t,
            Bucket::Other => self.other += t,
        }
    }

    pub fn merge(&mut self, other: &ActorLedger) {
        self.train += other.train;
        self.communicate += other.communicate;
        self.encrypt += other.encrypt;
        self.idle += other.idle;
        self.other += other.other;
        self.bytes_sent += other.bytes_sent;
        self.bytes_received += other.bytes_received;
    }
}

/// Whole-run time ledger: one entry per actor plus the logical clock.
#[derive(Debug, Clone, Default)]
pub struct TimeLedger {
    pub actors: BTreeMap<Actor, ActorLedger>,
    pub clock: SimTime,
}

impl TimeLedger {
    pub fn new(actors: impl IntoIterator<Item = Actor>) -> TimeLedger {
        TimeLedger {
            actors: actors
                .into_iter()
                .map(|a| (a, ActorLedger::default()))
                .collect(),
            clock: SimTime::ZERO,
        }
    }

    pub fn actor(&self, a: Actor) -> &ActorLedger {
        &self.actors[&a]
    }

    pub fn total_train(&self) -> SimTime {
        self.actors
            .values()
            .fold(SimTime::ZERO, |acc, l| acc + l.train)
    }

    pub fn total_all(&self) -> SimTime {
        self.actors
            .values()
            .fold(SimTime::ZERO, |acc, l| acc + l.total())
    }

    pub fn total_idle(&self) -> SimTime {
        self.actors
            .values()
            .fold(SimTime::ZERO, |acc, l| acc + l.idle)
    }
}

/// One round's charges, merged into the run ledger at the round barrier.
#[derive(Debug, Clone, Default)]
pub struct RoundCharges {
    pub actors: BTreeMap<Actor, ActorLedger>,
}

impl RoundCharges {
    pub fn new(actors: impl IntoIterator<Item = Actor>) -> RoundCharges {
        RoundCharges {
            actors: actors
                .into_iter()
                .map(|a| (a, ActorLedger::default()))
                .collect(),
        }
    }

    pub fn charge(&mut self, actor: Actor, bucket: Bucket, t: SimTime) {
        self.actors.entry(actor).or_default().charge(bucket, t);
    }

    /// Records one transfer: both endpoints are busy for its duration and the
    /// byte counters move.
    pub fn transfer(&mut self, from: Actor, to: Actor, bytes: usize, channel: &Channel) {
        let t = channel.transfer_time(bytes);
        let sender = self.actors.entry(from).or_default();
        sender.charge(Bucket::Communicate, t);
        sender.bytes_sent += bytes as u64;
        let receiver = self.actors.entry(to).or_default();
        receiver.charge(Bucket::Communicate, t);
        receiver.bytes_received += bytes as u64;
    }

    pub fn busy(&self, actor: Actor) -> SimTime {
        self.actors.get(&actor).map_or(SimTime::ZERO, |l| l.busy())
    }
}

/// What one synchronous round contributed: its wall duration and every
/// actor's finalized charges including idle.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub duration: SimTime,
    pub actors: BTreeMap<Actor, ActorLedger>,
}

/// Synchronous round barrier: the round lasts as long as its busiest actor,
/// and everyone else's gap is credited to their idle bucket.
pub fn round_clock(ledger: &mut TimeLedger, charges: &RoundCharges) -> Result<RoundOutcome> {
    for actor in charges.actors.keys() {
        if !ledger.actors.contains_key(actor) {
            return Err(Error::runtime(format!("unknown actor {actor} in round")));
        }
    }
    let round = ledger
        .actors
        .keys()
        .map(|a| charges.busy(*a))
        .max()
        .unwrap_or(SimTime::ZERO);
    let mut finalized = BTreeMap::new();
    for (actor, entry) in ledger.actors.iter_mut() {
        let mut contribution = charges.actors.get(actor).cloned().unwrap_or_default();
        contribution.idle = round.saturating_sub(contribution.busy());
        entry.merge(&contribution);
        finalized.insert(*actor, contribution);
    }
    ledger.clock += round;
    Ok(RoundOutcome {
        duration: round,
        actors: finalized,
    })
}

/// Framework overhead and end-to-end throughput for a finished run.
///
/// Overhead is the fraction of all actor time not spent training or
/// evaluating; throughput is samples processed per simulated second.
pub fn overhead_and_throughput(ledger: &TimeLedger, samples_processed: u64) -> Result<(f64, f64)> {
    let total = ledger.total_all();
    if total == SimTime::ZERO {
        return Err(Error::invalid("ledger has no recorded time"));
    }
    let train = ledger.total_train();
    let overhead = (total.0 - train.0.min(total.0)) as f64 / total.0 as f64;
    let throughput = samples_processed as f64 / ledger.clock.as_secs_f64();
    Ok((overhead, throughput))
}

/// Deterministic compute-cost model, in seconds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// Charge measured wall time for compute segments instead of the model
    /// below. Sanity-check mode only: it forfeits determinism.
    pub wall_clock: bool,
    /// Forward+backward cost per sample per parameter.
    pub train_per_sample_param: f64,
    /// Evaluation cost relative to a training pass.
    pub eval_factor: f64,
    /// Secret-sharing cost per vector element per part handled.
    pub encrypt_per_element: f64,
    /// Clip-and-noise cost per element.
    pub dp_per_element: f64,
    /// Compression cost per element.
    pub compress_per_element: f64,
    /// Aggregation cost per element per update.
    pub aggregate_per_element: f64,
    /// Fixed per-round bookkeeping per actor (scheduling, serialization).
    pub per_round_other: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            wall_clock: false,
            train_per_sample_param: 1e-7,
            eval_factor: 0.3,
            encrypt_per_element: 2e-8,
            dp_per_element: 2e-8,
            compress_per_element: 2e-8,
            aggregate_per_element: 1e-8,
            per_round_other: 1e-4,
        }
    }
}

impl CostModel {
    /// Picks the charged duration for a compute segment: the modeled cost in
    /// logical mode, the measured elapsed time in wall-clock mode.
    pub fn compute_charge(&self, modeled: SimTime, measured: std::time::Duration) -> SimTime {
        if self.wall_clock {
            SimTime(measured.as_nanos().min(u128::from(u64::MAX)) as u64)
        } else {
            modeled
        }
    }

    pub fn train_time(&self, samples: usize, params: usize) -> SimTime {
        SimTime::from_secs_f64(self.train_per_sample_param * samples as f64 * params as f64)
    }

    pub fn eval_time(&self, samples: usize, params: usize) -> SimTime {
        SimTime::from_secs_f64(
            self.train_per_sample_param * self.eval_factor * samples as f64 * params as f64,
        )
    }

    pub fn encrypt_time(&self, elements: usize, parts: usize) -> SimTime {
        SimTime::from_secs_f64(self.encrypt_per_element * elements as f64 * parts as f64)
    }

    pub fn dp_time(&self, elements: usize) -> SimTime {
        SimTime::from_secs_f64(self.dp_per_element * elements as f64)
    }

    pub fn compress_time(&self, elements: usize) -> SimTime {
        SimTime::from_secs_f64(self.compress_per_element * elements as f64)
    }

    pub fn aggregate_time(&self, elements: usize, updates: usize) -> SimTime {
        SimTime::from_secs_f64(self.aggregate_per_element * elements as f64 * updates as f64)
    }

    pub fn other_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.per_round_other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn transfer_arithmetic() {
        // 44.7 MB at 100 Mbps = 3.576 s.
        let ch = Channel::new(Some(100e6), 0.0).unwrap();
        let t = ch.transfer_time(44_700_000);
        assert_abs_diff_eq!(t.as_secs_f64(), 3.576, epsilon = 1e-9);

        let with_latency = Channel::new(Some(100e6), 0.010).unwrap();
        assert_abs_diff_eq!(
            with_latency.transfer_time(44_700_000).as_secs_f64(),
            3.586,
            epsilon = 1e-9
        );
    }

    #[test]
    fn unlimited_bandwidth_costs_latency_only() {
        let ch = Channel::new(None, 0.002).unwrap();
        assert_abs_diff_eq!(
            ch.transfer_time(1 << 30).as_secs_f64(),
            0.002,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(ch.transfer_time(0).as_secs_f64(), 0.002, epsilon = 1e-12);
    }

    #[test]
    fn zero_bytes_costs_latency_only() {
        let ch = Channel::new(Some(1e6), 0.5).unwrap();
        assert_abs_diff_eq!(ch.transfer_time(0).as_secs_f64(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn transfer_linear_in_bytes() {
        let ch = Channel::new(Some(7e6), 0.25).unwrap();
        let lat = SimTime::from_secs_f64(0.25);
        let one = ch.transfer_time(12_345).saturating_sub(lat);
        let two = ch.transfer_time(24_690).saturating_sub(lat);
        assert!(two.0.abs_diff(2 * one.0) <= 1);
    }

    #[test]
    fn round_clock_idle_accounting() {
        let actors = [Actor::Server, Actor::Client(0), Actor::Client(1)];
        let mut ledger = TimeLedger::new(actors);
        let mut charges = RoundCharges::new(actors);
        charges.charge(Actor::Client(0), Bucket::Train, SimTime::from_secs_f64(1.0));
        charges.charge(Actor::Client(1), Bucket::Train, SimTime::from_secs_f64(3.0));
        let round = round_clock(&mut ledger, &charges).unwrap().duration;
        assert_abs_diff_eq!(round.as_secs_f64(), 3.0);
        assert_abs_diff_eq!(ledger.actor(Actor::Client(0)).idle.as_secs_f64(), 2.0);
        assert_abs_diff_eq!(ledger.actor(Actor::Client(1)).idle.as_secs_f64(), 0.0);
        assert_abs_diff_eq!(ledger.actor(Actor::Server).idle.as_secs_f64(), 3.0);
        // Conservation is exact in integer nanoseconds.
        for l in ledger.actors.values() {
            assert_eq!(l.total(), round);
        }
        assert_eq!(ledger.clock, round);
    }

    #[test]
    fn equal_busy_times_no_idle() {
        let actors = [Actor::Client(0), Actor::Client(1)];
        let mut ledger = TimeLedger::new(actors);
        let mut charges = RoundCharges::new(actors);
        for a in actors {
            charges.charge(a, Bucket::Train, SimTime::from_secs_f64(2.0));
        }
        round_clock(&mut ledger, &charges).unwrap();
        assert_eq!(ledger.total_idle(), SimTime::ZERO);
    }

    #[test]
    fn unknown_actor_rejected() {
        let mut ledger = TimeLedger::new([Actor::Server]);
        let mut charges = RoundCharges::default();
        charges.charge(Actor::Client(5), Bucket::Train, SimTime(1));
        assert!(round_clock(&mut ledger, &charges).is_err());
    }

    #[test]
    fn overhead_arithmetic() {
        let mut ledger = TimeLedger::new([Actor::Server]);
        let mut charges = RoundCharges::new([Actor::Server]);
        charges.charge(Actor::Server, Bucket::Train, SimTime::from_secs_f64(7.0));
        charges.charge(Actor::Server, Bucket::Other, SimTime::from_secs_f64(3.0));
        round_clock(&mut ledger, &charges).unwrap();
        let (overhead, throughput) = overhead_and_throughput(&ledger, 100).unwrap();
        assert_abs_diff_eq!(overhead, 0.30, epsilon = 1e-12);
        assert_abs_diff_eq!(throughput, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn all_train_zero_overhead() {
        let mut ledger = TimeLedger::new([Actor::Server]);
        let mut charges = RoundCharges::new([Actor::Server]);
        charges.charge(Actor::Server, Bucket::Train, SimTime::from_secs_f64(5.0));
        round_clock(&mut ledger, &charges).unwrap();
        let (overhead, _) = overhead_and_throughput(&ledger, 1).unwrap();
        assert_eq!(overhead, 0.0);
    }

    #[test]
    fn clock_monotone() {
        let mut ledger = TimeLedger::new([Actor::Server]);
        let mut last = SimTime::ZERO;
        for i in 0..10 {
            let mut charges = RoundCharges::new([Actor::Server]);
            charges.charge(Actor::Server, Bucket::Train, SimTime(i * 100));
            round_clock(&mut ledger, &charges).unwrap();
            assert!(ledger.clock >= last);
            last = ledger.clock;
        }
    }
}
