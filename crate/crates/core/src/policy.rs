//! Dispatch policies.
//!
//! Every stateless policy is split into two halves: [`draw_candidates`] consumes
//! randomness and never looks at queue state, [`resolve`] is a pure function of
//! the candidates and the current loads. Coupled runs rely on this split to feed
//! identical draws into two systems in different states.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Uniform,
    Pot,
    Pss,
    PpotSq,
    PpotLl,
    GreedySq,
    GreedyLl,
    MultiArmed,
    Exp3,
    Exp4,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 10] = [
        PolicyKind::Uniform,
        PolicyKind::Pot,
        PolicyKind::Pss,
        PolicyKind::PpotSq,
        PolicyKind::PpotLl,
        PolicyKind::GreedySq,
        PolicyKind::GreedyLl,
        PolicyKind::MultiArmed,
        PolicyKind::Exp3,
        PolicyKind::Exp4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Uniform => "uniform",
            PolicyKind::Pot => "pot",
            PolicyKind::Pss => "pss",
            PolicyKind::PpotSq => "ppot_sq",
            PolicyKind::PpotLl => "ppot_ll",
            PolicyKind::GreedySq => "greedy_sq",
            PolicyKind::GreedyLl => "greedy_ll",
            PolicyKind::MultiArmed => "multi_armed",
            PolicyKind::Exp3 => "exp3",
            PolicyKind::Exp4 => "exp4",
        }
    }

    pub fn needs_explore_prob(self) -> bool {
        self == PolicyKind::MultiArmed
    }

    pub fn needs_gamma(self) -> bool {
        matches!(self, PolicyKind::Exp3 | PolicyKind::Exp4)
    }

    /// Bandit policies carry per-run weights and cannot be split into draw/resolve.
    pub fn is_stateful(self) -> bool {
        self.needs_gamma()
    }

    /// Whether the policy compares estimated waiting times instead of raw lengths.
    pub fn uses_least_loaded(self) -> bool {
        matches!(self, PolicyKind::PpotLl | PolicyKind::GreedyLl)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::config(format!("unknown policy kind `{s}`")))
    }
}

/// Where a policy reads worker speeds from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedSource {
    #[default]
    TrueRates,
    LearnedEstimates,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig<R> {
    pub kind: PolicyKind,
    /// Probability of a uniform draw (`MultiArmed` only).
    pub explore_prob: Option<R>,
    /// Exploration mix for the bandit policies.
    pub gamma: Option<R>,
    pub speed_source: SpeedSource,
}

impl<R: Real> PolicyConfig<R> {
    /// A parameterless policy reading oracle rates.
    pub fn simple(kind: PolicyKind) -> Self {
        PolicyConfig {
            kind,
            explore_prob: None,
            gamma: None,
            speed_source: SpeedSource::TrueRates,
        }
    }

    pub fn multi_armed(explore_prob: R) -> Self {
        PolicyConfig {
            explore_prob: Some(explore_prob),
            ..Self::simple(PolicyKind::MultiArmed)
        }
    }

    pub fn bandit(kind: PolicyKind, gamma: R) -> Self {
        PolicyConfig {
            gamma: Some(gamma),
            ..Self::simple(kind)
        }
    }

    pub fn learned(mut self) -> Self {
        self.speed_source = SpeedSource::LearnedEstimates;
        self
    }

    /// Checks that parameters are present exactly when the kind requires them.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        match (kind.needs_explore_prob(), self.explore_prob) {
            (true, None) => {
                return Err(SimError::config(format!(
                    "policy `{kind}` requires explore_prob"
                )))
            }
            (false, Some(_)) => {
                return Err(SimError::config(format!(
                    "policy `{kind}` does not take explore_prob"
                )))
            }
            (true, Some(eta)) if !(eta >= R::zero() && eta <= R::one()) => {
                return Err(SimError::config("explore_prob must lie in [0, 1]"))
            }
            _ => {}
        }
        match (kind.needs_gamma(), self.gamma) {
            (true, None) => Err(SimError::config(format!("policy `{kind}` requires gamma"))),
            (false, Some(_)) => Err(SimError::config(format!(
                "policy `{kind}` does not take gamma"
            ))),
            (true, Some(g)) if !(g > R::zero() && g <= R::one()) => {
                Err(SimError::config("gamma must lie in (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// A distribution over workers.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector<R>(Vec<R>);

impl<R: Real> ProbabilityVector<R> {
    /// Wraps `p` after checking non-negativity and unit mass (tolerance `1e-9`).
    pub fn new(p: Vec<R>) -> Result<Self> {
        if p.is_empty() {
            return Err(SimError::config("probability vector is empty"));
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= R::zero())) {
            return Err(SimError::config(
                "probability entries must be finite and non-negative",
            ));
        }
        let total: R = p.iter().copied().sum();
        if (total - R::one()).abs() > R::lit(1e-9) {
            return Err(SimError::config(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(ProbabilityVector(p))
    }

    pub fn uniform(n: usize) -> Self {
        ProbabilityVector(vec![R::one() / R::count(n); n])
    }

    pub fn as_slice(&self) -> &[R] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<R> {
        self.0
    }

    /// Inverse-CDF draw; never returns a zero-probability index.
    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> usize {
        let u = R::sample_unit(rng);
        let mut acc = R::zero();
        let mut last_positive = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > R::zero() {
                acc = acc + p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }
}

/// Proportional-sampling weights `p_i = mu_i / sum(mu)`.
///
/// When every estimate is zero the scheduler has nothing to go on and falls back
/// to uniform over all workers.
pub fn pss_weights<R: Real>(mu_hat: &[R]) -> Result<ProbabilityVector<R>> {
    if mu_hat.is_empty() {
        return Err(SimError::config("no workers"));
    }
    if mu_hat.iter().any(|m| !(m.is_finite() && *m >= R::zero())) {
        return Err(SimError::config(
            "rate estimates must be finite and non-negative",
        ));
    }
    let total: R = mu_hat.iter().copied().sum();
    if total <= R::zero() {
        log::warn!("all rate estimates are zero; falling back to uniform dispatch");
        return Ok(ProbabilityVector::uniform(mu_hat.len()));
    }
    Ok(ProbabilityVector(
        mu_hat.iter().map(|&m| m / total).collect(),
    ))
}

/// Probability that a worker with proportional weight `p` is one of two
/// independent candidates.
pub fn candidate_marginal<R: Real>(p: R) -> R {
    let miss = R::one() - p;
    R::one() - miss * miss
}

/// Sum tree over non-negative weights: O(log n) point updates and draws.
///
/// Internal sums are recomputed from their children on every update, so the
/// tree never accumulates drift from repeated add/subtract.
#[derive(Clone, Debug)]
pub struct WeightedSampler<R> {
    leaves: usize,
    len: usize,
    tree: Vec<R>,
}

impl<R: Real> WeightedSampler<R> {
    pub fn new(weights: &[R]) -> Self {
        let len = weights.len();
        let leaves = len.next_power_of_two().max(1);
        let mut tree = vec![R::zero(); 2 * leaves];
        tree[leaves..leaves + len].copy_from_slice(weights);
        for node in (1..leaves).rev() {
            tree[node] = tree[2 * node] + tree[2 * node + 1];
        }
        WeightedSampler { leaves, len, tree }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> R {
        self.tree[1]
    }

    pub fn weight(&self, i: usize) -> R {
        self.tree[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, w: R) {
        let mut node = self.leaves + i;
        if self.tree[node] == w {
            return;
        }
        self.tree[node] = w;
        while node > 1 {
            node /= 2;
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1];
        }
    }

    /// Draws an index with probability proportional to its weight, or `None`
    /// when every weight is zero. Consumes exactly one uniform either way.
    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> Option<usize> {
        let u = R::sample_unit(rng);
        let total = self.total();
        if total <= R::zero() {
            return None;
        }
        let mut target = u * total;
        let mut node = 1;
        while node < self.leaves {
            let left = self.tree[2 * node];
            let right = self.tree[2 * node + 1];
            if left > R::zero() && (target < left || right <= R::zero()) {
                node *= 2;
            } else {
                target = target - left;
                node = 2 * node + 1;
            }
        }
        Some(node - self.leaves)
    }

    /// Proportional draw, or a uniform one when all weights are zero.
    pub fn sample_or_uniform<G: Rng + ?Sized>(&self, rng: &mut G) -> usize {
        match self.sample(rng) {
            Some(i) => i,
            None => uniform_index::<R, G>(rng, self.len),
        }
    }
}

/// Uniform draw over `0..n` as `floor(u * n)`.
///
/// Uses the same single uniform a [`WeightedSampler`] consumes, so a sampler over
/// unit weights picks exactly the same index from the same stream.
pub fn uniform_index<R: Real, G: Rng + ?Sized>(rng: &mut G, n: usize) -> usize {
    let u = R::sample_unit(rng);
    let idx = (u * R::count(n)).floor().to_usize().unwrap_or(0);
    idx.min(n - 1)
}

/// Workers a stateless policy will compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Candidates {
    One(usize),
    /// First and second draw, in order; ties resolve to the first.
    Two(usize, usize),
    /// Probe every worker.
    All,
}

/// Draws the candidate set for a stateless policy. `routing` holds the speeds
/// the policy believes in (oracle or learned).
pub fn draw_candidates<R: Real, G: Rng + ?Sized>(
    policy: &PolicyConfig<R>,
    routing: &WeightedSampler<R>,
    rng: &mut G,
) -> Result<Candidates> {
    let n = routing.len();
    if n == 0 {
        return Err(SimError::config("no workers"));
    }
    let cands = match policy.kind {
        PolicyKind::Uniform => Candidates::One(uniform_index::<R, G>(rng, n)),
        PolicyKind::Pot => {
            let first = uniform_index::<R, G>(rng, n);
            Candidates::Two(first, uniform_index::<R, G>(rng, n))
        }
        PolicyKind::Pss => Candidates::One(routing.sample_or_uniform(rng)),
        PolicyKind::PpotSq | PolicyKind::PpotLl => {
            let first = routing.sample_or_uniform(rng);
            Candidates::Two(first, routing.sample_or_uniform(rng))
        }
        PolicyKind::GreedySq | PolicyKind::GreedyLl => Candidates::All,
        PolicyKind::MultiArmed => {
            let eta = policy
                .explore_prob
                .ok_or_else(|| SimError::config("multi_armed requires explore_prob"))?;
            if R::sample_unit(rng) < eta {
                Candidates::One(uniform_index::<R, G>(rng, n))
            } else {
                let first = routing.sample_or_uniform(rng);
                Candidates::Two(first, routing.sample_or_uniform(rng))
            }
        }
        PolicyKind::Exp3 | PolicyKind::Exp4 => {
            return Err(SimError::fault(format!(
                "policy `{}` is stateful and has no stateless candidate draw",
                policy.kind
            )))
        }
    };
    Ok(cands)
}

/// Estimated completion time of one more task at a worker holding `load` tasks.
pub fn waiting_estimate<R: Real>(load: usize, mu_hat: R) -> R {
    if mu_hat > R::zero() {
        R::count(load + 1) / mu_hat
    } else {
        R::infinity()
    }
}

/// Picks among `cands` using raw loads (SQ) or estimated waits (LL).
pub fn resolve<R: Real>(
    kind: PolicyKind,
    cands: Candidates,
    loads: &[usize],
    mu_hat: &[R],
) -> usize {
    let least_loaded = kind.uses_least_loaded();
    let better = |a: usize, b: usize| -> bool {
        if least_loaded {
            waiting_estimate(loads[b], mu_hat[b]) < waiting_estimate(loads[a], mu_hat[a])
        } else {
            loads[b] < loads[a]
        }
    };
    match cands {
        Candidates::One(j) => j,
        Candidates::Two(first, second) => {
            if better(first, second) {
                second
            } else {
                first
            }
        }
        Candidates::All => {
            let mut best = 0;
            for j in 1..loads.len() {
                if better(best, j) {
                    best = j;
                }
            }
            best
        }
    }
}

/// One dispatch decision for a stateless policy.
pub fn select<R: Real, G: Rng + ?Sized>(
    policy: &PolicyConfig<R>,
    routing: &WeightedSampler<R>,
    mu_hat: &[R],
    loads: &[usize],
    rng: &mut G,
) -> Result<usize> {
    if loads.len() != routing.len() || mu_hat.len() != loads.len() {
        return Err(SimError::config("loads and rate vector lengths differ"));
    }
    let cands = draw_candidates(policy, routing, rng)?;
    Ok(resolve(policy.kind, cands, loads, mu_hat))
}
