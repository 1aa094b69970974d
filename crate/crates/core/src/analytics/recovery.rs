//! Coupled runs of the discrete chain: one system starts overloaded, the other
//! near stationarity, and both consume the same randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{DiscreteChain, DiscreteChainState, DiscreteEvent};
use crate::error::{Result, SimError};
use crate::policy::{PolicyConfig, PolicyKind};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryConfig<R> {
    /// Worker speeds; their sum sets the capacity.
    pub speeds: Vec<R>,
    pub alpha: R,
    pub policy: PolicyConfig<R>,
    /// Initial backlog of every queue in the overloaded system.
    pub backlog: u64,
    /// Stop once the fraction of differing queues falls to this level.
    pub epsilon_target: R,
    /// Time limit.
    pub horizon: R,
    pub sample_interval: R,
    /// Rounds used to warm the reference system; `None` means `50 n`.
    pub burn_in_rounds: Option<u64>,
    pub seed: u64,
    /// Keep sampling until the horizon instead of stopping at recovery.
    pub run_to_horizon: bool,
}

impl<R: Real> RecoveryConfig<R> {
    /// Homogeneous unit-speed cluster of `n` workers under two-choice
    /// shortest-queue routing.
    pub fn homogeneous(n: usize, alpha: R, backlog: u64, seed: u64) -> Self {
        RecoveryConfig {
            speeds: vec![R::one(); n],
            alpha,
            policy: PolicyConfig::simple(PolicyKind::PpotSq),
            backlog,
            epsilon_target: R::lit(0.05),
            horizon: R::lit(1000.0),
            sample_interval: R::lit(0.5),
            burn_in_rounds: None,
            seed,
            run_to_horizon: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speeds.is_empty() {
            return Err(SimError::config("recovery run needs at least one worker"));
        }
        if !(self.alpha > R::zero() && self.alpha < R::one()) {
            return Err(SimError::config("recovery run needs 0 < alpha < 1"));
        }
        if !(self.horizon > R::zero() && self.sample_interval > R::zero()) {
            return Err(SimError::config(
                "horizon and sample interval must be positive",
            ));
        }
        if !(self.epsilon_target >= R::zero() && self.epsilon_target <= R::one()) {
            return Err(SimError::config("epsilon_target must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoverySample<R> {
    pub time: R,
    pub round: u64,
    pub l0: R,
    pub l1: R,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryResult<R> {
    pub samples: Vec<RecoverySample<R>>,
    /// First sample time with `l0 <= epsilon_target`.
    pub recovery_time: Option<R>,
    pub horizon_exceeded: bool,
    pub final_l0: R,
    pub final_l1: R,
    /// Rate `r` of the least-squares fit `l1(t) ~ C exp(-r t)` over positive samples.
    pub decay_rate: Option<R>,
    /// Whether `l1` never increased between any two consecutive rounds.
    pub l1_monotone: bool,
}

impl<R: Real> RecoveryResult<R> {
    /// Whether the sampled `l1` series never increases.
    pub fn sampled_l1_non_increasing(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].l1 <= w[0].l1)
    }
}

/// Runs the coupled pair and records their distance.
///
/// The reference system is warmed from empty on its own stream; afterwards
/// both systems share every arrival, candidate draw and processing event.
pub fn coupled_recovery_run<R: Real>(config: &RecoveryConfig<R>) -> Result<RecoveryResult<R>> {
    config.validate()?;
    let n = config.speeds.len();
    let capacity: R = config.speeds.iter().copied().sum();
    let lambda = config.alpha * capacity;
    let mut chain = DiscreteChain::new(lambda, config.speeds.clone(), config.policy.clone())?;
    let rounds_per_time = chain.total_rate();

    let mut reference = DiscreteChainState::empty(n);
    let mut warm_rng = ChaCha8Rng::seed_from_u64(config.seed);
    warm_rng.set_stream(1);
    let burn_in = config.burn_in_rounds.unwrap_or(50 * n as u64);
    for _ in 0..burn_in {
        chain.step(&mut reference, &mut warm_rng)?;
    }
    reference.round = 0;
    let mut overloaded = DiscreteChainState::filled(n, config.backlog);

    let mut differ = 0usize;
    let mut l1: u64 = 0;
    for (&a, &b) in overloaded.queues.iter().zip(&reference.queues) {
        differ += usize::from(a != b);
        l1 += a.abs_diff(b);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let to_real = |x: u64| R::lit(x as f64);
    let fraction = |d: usize| R::count(d) / R::count(n);
    let horizon_rounds = (config.horizon * rounds_per_time)
        .ceil()
        .to_u64()
        .unwrap_or(u64::MAX);
    let interval_rounds = (config.sample_interval * rounds_per_time)
        .round()
        .to_u64()
        .unwrap_or(1)
        .max(1);

    let mut samples = vec![RecoverySample {
        time: R::zero(),
        round: 0,
        l0: fraction(differ),
        l1: to_real(l1),
    }];
    let mut recovery_time = (fraction(differ) <= config.epsilon_target).then(R::zero);
    let mut l1_monotone = true;
    let mut round = 0u64;
    while round < horizon_rounds && (recovery_time.is_none() || config.run_to_horizon) {
        let draw = chain.draw(&mut rng)?;
        let before_l1 = l1;
        let ea = chain.apply(&mut overloaded, draw);
        let eb = chain.apply(&mut reference, draw);
        round += 1;
        let (wa, wb) = (event_worker(ea), event_worker(eb));
        for i in [wa, wb] {
            let (a, b) = (overloaded.queues[i], reference.queues[i]);
            let (old_a, old_b) = (undo(a, ea, i), undo(b, eb, i));
            differ = differ + usize::from(a != b) - usize::from(old_a != old_b);
            l1 = l1 + a.abs_diff(b) - old_a.abs_diff(old_b);
            if wa == wb {
                break;
            }
        }
        if l1 > before_l1 {
            l1_monotone = false;
        }
        if round.is_multiple_of(interval_rounds) {
            let time = R::lit(round as f64) / rounds_per_time;
            let l0 = fraction(differ);
            samples.push(RecoverySample {
                time,
                round,
                l0,
                l1: to_real(l1),
            });
            if recovery_time.is_none() && l0 <= config.epsilon_target {
                recovery_time = Some(time);
            }
        }
    }

    let decay_rate = fit_decay(&samples);
    Ok(RecoveryResult {
        final_l0: fraction(differ),
        final_l1: to_real(l1),
        horizon_exceeded: recovery_time.is_none(),
        recovery_time,
        samples,
        decay_rate,
        l1_monotone,
    })
}

fn event_worker(event: DiscreteEvent) -> usize {
    match event {
        DiscreteEvent::Arrival(i) | DiscreteEvent::Departure(i) | DiscreteEvent::Idle(i) => i,
    }
}

/// Value of coordinate `i` before `event` was applied.
fn undo(q: u64, event: DiscreteEvent, i: usize) -> u64 {
    match event {
        DiscreteEvent::Arrival(j) if j == i => q - 1,
        DiscreteEvent::Departure(j) if j == i => q + 1,
        _ => q,
    }
}

/// Least-squares slope of `ln l1` against time, negated.
fn fit_decay<R: Real>(samples: &[RecoverySample<R>]) -> Option<R> {
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.l1 > R::zero())
        .map(|s| (s.time.as_f64(), s.l1.as_f64().ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| R::lit(-sxy / sxx))
}
