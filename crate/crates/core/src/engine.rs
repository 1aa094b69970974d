//! Virtual clock, event queue, seeded random streams and the uniformized
//! discrete-time chain.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::policy::{draw_candidates, resolve, Candidates, PolicyConfig, WeightedSampler};
use crate::scalar::Real;

/// Dimensionless virtual time; finite and non-negative.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SimTime<R>(R);

impl<R: Real> SimTime<R> {
    pub fn new(value: R) -> Result<Self> {
        if value.is_finite() && value >= R::zero() {
            Ok(SimTime(value))
        } else {
            Err(SimError::fault(format!("invalid simulation time {value}")))
        }
    }

    pub fn zero() -> Self {
        SimTime(R::zero())
    }

    pub fn value(self) -> R {
        self.0
    }

    pub fn after(self, dt: R) -> Result<Self> {
        Self::new(self.0 + dt)
    }
}

impl<R: Real> Eq for SimTime<R> {}

impl<R: Real> Ord for SimTime<R> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Constructor rejects NaN, so the partial order is total here.
        self.0.partial_cmp(&other.0).unwrap_or(Ordering::Equal)
    }
}

impl<R: Real> PartialOrd for SimTime<R> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    JobArrival,
    TaskCompletion(usize),
    BenchmarkArrival,
    SpeedShock,
    MetricsSample,
}

#[derive(Clone, Copy, Debug)]
pub struct EventRecord<R> {
    pub time: SimTime<R>,
    pub sequence: u64,
    pub kind: EventKind,
}

impl<R: Real> PartialEq for EventRecord<R> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<R: Real> Eq for EventRecord<R> {}

impl<R: Real> Ord for EventRecord<R> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .cmp(&other.time)
            .then(self.sequence.cmp(&other.sequence))
    }
}

impl<R: Real> PartialOrd for EventRecord<R> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue over `(time, sequence)` that also owns the clock.
#[derive(Debug)]
pub struct EventQueue<R: Real> {
    heap: BinaryHeap<Reverse<EventRecord<R>>>,
    next_sequence: u64,
    now: SimTime<R>,
}

impl<R: Real> Default for EventQueue<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> EventQueue<R> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_sequence: 0,
            now: SimTime::zero(),
        }
    }

    pub fn now(&self) -> SimTime<R> {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Inserts an event; scheduling into the past is a fault.
    pub fn schedule(&mut self, time: SimTime<R>, kind: EventKind) -> Result<u64> {
        if time < self.now {
            return Err(SimError::fault(format!(
                "event {kind:?} scheduled at {} before clock {}",
                time.value(),
                self.now.value()
            )));
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Reverse(EventRecord {
            time,
            sequence,
            kind,
        }));
        Ok(sequence)
    }

    pub fn schedule_in(&mut self, delay: R, kind: EventKind) -> Result<u64> {
        let at = self.now.after(delay)?;
        self.schedule(at, kind)
    }

    /// Pops the earliest event and advances the clock. `None` means the
    /// simulation has nothing left to do.
    pub fn next_event(&mut self) -> Option<EventRecord<R>> {
        let Reverse(record) = self.heap.pop()?;
        self.now = record.time;
        Some(record)
    }

    pub fn peek_time(&self) -> Option<SimTime<R>> {
        self.heap.peek().map(|Reverse(r)| r.time)
    }
}

/// Named consumers of randomness. Each gets its own ChaCha stream so that
/// changing one consumer never perturbs another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamId {
    Arrivals = 0,
    Service = 1,
    Policy = 2,
    Benchmark = 3,
    Shocks = 4,
    Speeds = 5,
}

const STREAM_COUNT: usize = 6;
/// Stream ids at and above this offset are per-worker service streams.
const WORKER_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug)]
pub struct RandomStreams {
    seed: u64,
    streams: Vec<ChaCha8Rng>,
}

impl RandomStreams {
    pub fn new(seed: u64) -> Self {
        let streams = (0..STREAM_COUNT as u64)
            .map(|id| Self::derive(seed, id))
            .collect();
        RandomStreams { seed, streams }
    }

    fn derive(seed: u64, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&mut self, id: StreamId) -> &mut ChaCha8Rng {
        &mut self.streams[id as usize]
    }

    /// Independent service stream for one worker.
    pub fn worker_stream(&self, worker: usize) -> ChaCha8Rng {
        Self::derive(self.seed, WORKER_STREAM_BASE + worker as u64)
    }
}

/// Exponential draw with mean `1 / rate`.
pub fn sample_exponential<R: Real, G: Rng + ?Sized>(rng: &mut G, rate: R) -> Result<R> {
    if !(rate.is_finite() && rate > R::zero()) {
        return Err(SimError::config(format!(
            "exponential rate must be positive, got {rate}"
        )));
    }
    Ok(R::sample_exp1(rng) / rate)
}

/// Queue lengths of the discrete-time chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteChainState {
    pub queues: Vec<u64>,
    pub round: u64,
}

impl DiscreteChainState {
    pub fn empty(n: usize) -> Self {
        Self::filled(n, 0)
    }

    pub fn filled(n: usize, backlog: u64) -> Self {
        DiscreteChainState {
            queues: vec![backlog; n],
            round: 0,
        }
    }
}

/// Randomness for one round, independent of the chain state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundDraw {
    Arrival(Candidates),
    Processing(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscreteEvent {
    Arrival(usize),
    Departure(usize),
    /// A processing event hit an empty queue.
    Idle(usize),
}

/// Uniformized chain: each round is an arrival with probability
/// `lambda / (lambda + sum mu)`, otherwise a processing event at worker `i`
/// with probability `mu_i / (lambda + sum mu)`.
#[derive(Clone, Debug)]
pub struct DiscreteChain<R> {
    lambda: R,
    total_rate: R,
    mu: Vec<R>,
    service: WeightedSampler<R>,
    policy: PolicyConfig<R>,
    loads: Vec<usize>,
}

impl<R: Real> DiscreteChain<R> {
    /// Chain whose policy routes with the true rates `mu`.
    pub fn new(lambda: R, mu: Vec<R>, policy: PolicyConfig<R>) -> Result<Self> {
        if !(lambda.is_finite() && lambda > R::zero()) {
            return Err(SimError::config("arrival rate must be positive"));
        }
        if mu.is_empty() || mu.iter().any(|m| !(m.is_finite() && *m >= R::zero())) {
            return Err(SimError::config("service rates must be non-negative"));
        }
        let capacity: R = mu.iter().copied().sum();
        if capacity <= R::zero() {
            return Err(SimError::config("total service rate must be positive"));
        }
        policy.validate()?;
        if policy.kind.is_stateful() {
            return Err(SimError::config(format!(
                "policy `{}` is not supported in discrete mode",
                policy.kind
            )));
        }
        Ok(DiscreteChain {
            lambda,
            total_rate: lambda + capacity,
            service: WeightedSampler::new(&mu),
            loads: vec![0; mu.len()],
            mu,
            policy,
        })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn lambda(&self) -> R {
        self.lambda
    }

    pub fn mu(&self) -> &[R] {
        &self.mu
    }

    /// `lambda + sum mu`: rounds per unit of continuous time.
    pub fn total_rate(&self) -> R {
        self.total_rate
    }

    pub fn draw<G: Rng + ?Sized>(&self, rng: &mut G) -> Result<RoundDraw> {
        let u = R::sample_unit(rng) * self.total_rate;
        if u < self.lambda {
            Ok(RoundDraw::Arrival(draw_candidates(
                &self.policy,
                &self.service,
                rng,
            )?))
        } else {
            let worker = self
                .service
                .sample(rng)
                .ok_or_else(|| SimError::fault("no worker can process"))?;
            Ok(RoundDraw::Processing(worker))
        }
    }

    /// Applies a draw to `state`; pure in the sense that the same draw on the
    /// same state always yields the same outcome.
    pub fn apply(&mut self, state: &mut DiscreteChainState, draw: RoundDraw) -> DiscreteEvent {
        state.round += 1;
        match draw {
            RoundDraw::Arrival(cands) => {
                let worker = match cands {
                    Candidates::One(j) => j,
                    Candidates::Two(a, b) => self.apply_pair(state, a, b),
                    Candidates::All => {
                        for (l, &q) in self.loads.iter_mut().zip(&state.queues) {
                            *l = q as usize;
                        }
                        resolve(self.policy.kind, cands, &self.loads, &self.mu)
                    }
                };
                state.queues[worker] += 1;
                DiscreteEvent::Arrival(worker)
            }
            RoundDraw::Processing(i) => {
                if state.queues[i] > 0 {
                    state.queues[i] -= 1;
                    DiscreteEvent::Departure(i)
                } else {
                    DiscreteEvent::Idle(i)
                }
            }
        }
    }

    /// Two-candidate resolution that reads queues in place.
    fn apply_pair(&self, state: &mut DiscreteChainState, first: usize, second: usize) -> usize {
        let q = &state.queues;
        let pick_second = if self.policy.kind.uses_least_loaded() {
            let wait = |j: usize| R::count(q[j] as usize + 1) / self.mu[j];
            wait(second) < wait(first)
        } else {
            q[second] < q[first]
        };
        if pick_second {
            second
        } else {
            first
        }
    }

    pub fn step<G: Rng + ?Sized>(
        &mut self,
        state: &mut DiscreteChainState,
        rng: &mut G,
    ) -> Result<DiscreteEvent> {
        let draw = self.draw(rng)?;
        Ok(self.apply(state, draw))
    }
}

/// One round of the discrete chain with routing by the true rates.
pub fn step_discrete<R: Real, G: Rng + ?Sized>(
    state: &mut DiscreteChainState,
    lambda: R,
    mu: &[R],
    policy: &PolicyConfig<R>,
    rng: &mut G,
) -> Result<DiscreteEvent> {
    if state.queues.len() != mu.len() {
        return Err(SimError::config("state and rate vector lengths differ"));
    }
    let mut chain = DiscreteChain::new(lambda, mu.to_vec(), policy.clone())?;
    chain.step(state, rng)
}
