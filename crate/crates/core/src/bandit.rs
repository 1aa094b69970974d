//! Exponential-weight bandit dispatchers (Exp3 over workers, Exp4 over a
//! proportional-sampling expert and a uniform expert).

use rand::Rng;

use crate::error::{Result, SimError};
use crate::policy::ProbabilityVector;
use crate::scalar::Real;

/// Weights are rescaled once the largest exceeds this; probabilities depend
/// only on ratios so draws are unaffected.
const RESCALE_ABOVE: f64 = 1e100;

fn check_gamma<R: Real>(gamma: R) -> Result<()> {
    if gamma > R::zero() && gamma <= R::one() {
        Ok(())
    } else {
        Err(SimError::config(format!(
            "gamma must lie in (0, 1], got {gamma}"
        )))
    }
}

fn check_reward<R: Real>(x: R) -> Result<()> {
    if x >= R::zero() && x <= R::one() {
        Ok(())
    } else {
        Err(SimError::fault(format!("reward {x} outside [0, 1]")))
    }
}

fn rescale<R: Real>(weights: &mut [R]) {
    let max = weights.iter().copied().fold(R::zero(), R::max);
    if max > R::lit(RESCALE_ABOVE) || max.is_infinite() {
        let floor = R::min_positive_value();
        for w in weights.iter_mut() {
            *w = (*w / max).max(floor);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exp3State<R> {
    weights: Vec<R>,
    gamma: R,
    cumulative_reward: R,
}

impl<R: Real> Exp3State<R> {
    /// All weights start at 1.
    pub fn new(arms: usize, gamma: R) -> Result<Self> {
        if arms < 2 {
            return Err(SimError::config("exp3 needs at least two arms"));
        }
        check_gamma(gamma)?;
        Ok(Exp3State {
            weights: vec![R::one(); arms],
            gamma,
            cumulative_reward: R::zero(),
        })
    }

    pub fn with_weights(weights: Vec<R>, gamma: R) -> Result<Self> {
        if weights.len() < 2 || weights.iter().any(|w| !(w.is_finite() && *w > R::zero())) {
            return Err(SimError::config(
                "exp3 weights must be positive, at least two",
            ));
        }
        check_gamma(gamma)?;
        Ok(Exp3State {
            weights,
            gamma,
            cumulative_reward: R::zero(),
        })
    }

    pub fn arms(&self) -> usize {
        self.weights.len()
    }

    pub fn gamma(&self) -> R {
        self.gamma
    }

    pub fn weights(&self) -> &[R] {
        &self.weights
    }

    pub fn cumulative_reward(&self) -> R {
        self.cumulative_reward
    }

    /// `(1 - gamma) w_i / sum w + gamma / K`.
    pub fn probabilities(&self) -> ProbabilityVector<R> {
        let k = R::count(self.arms());
        let total: R = self.weights.iter().copied().sum();
        let keep = R::one() - self.gamma;
        let floor = self.gamma / k;
        let p = self
            .weights
            .iter()
            .map(|&w| keep * w / total + floor)
            .collect();
        ProbabilityVector::new(p).unwrap_or_else(|_| ProbabilityVector::uniform(self.arms()))
    }

    /// Draws an arm; returns it with its selection probability.
    pub fn choose<G: Rng + ?Sized>(&self, rng: &mut G) -> (usize, R) {
        let p = self.probabilities();
        let arm = p.sample(rng);
        (arm, p.as_slice()[arm])
    }

    /// Importance-weighted update of the chosen arm only.
    pub fn update(&mut self, arm: usize, reward: R) -> Result<()> {
        check_reward(reward)?;
        if arm >= self.arms() {
            return Err(SimError::fault(format!("arm {arm} out of range")));
        }
        let p = self.probabilities().as_slice()[arm];
        let estimate = reward / p;
        let k = R::count(self.arms());
        self.weights[arm] = self.weights[arm] * (self.gamma * estimate / k).exp();
        self.cumulative_reward = self.cumulative_reward + reward;
        rescale(&mut self.weights);
        Ok(())
    }
}

/// Reward of running a task on a worker, with a flag set when an input had to
/// be clamped into range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reward<R> {
    pub value: R,
    pub clamped: bool,
}

/// `(t_d / L_max) * (1 - S_min / w)`: long tasks on fast workers pay most,
/// anything on the slowest worker pays nothing.
pub fn reward<R: Real>(
    task_duration: R,
    worker_rate: R,
    slowest_rate: R,
    longest_task: R,
) -> Result<Reward<R>> {
    if !(slowest_rate > R::zero() && longest_task > R::zero()) {
        return Err(SimError::config("reward needs positive S_min and L_max"));
    }
    if !(task_duration >= R::zero() && worker_rate.is_finite()) {
        return Err(SimError::fault("reward inputs out of range"));
    }
    let mut clamped = false;
    let mut length = task_duration / longest_task;
    if length > R::one() {
        length = R::one();
        clamped = true;
    }
    if worker_rate < slowest_rate {
        return Ok(Reward {
            value: R::zero(),
            clamped: true,
        });
    }
    Ok(Reward {
        value: length * (R::one() - slowest_rate / worker_rate),
        clamped,
    })
}

/// Exp4 over two experts: index 0 follows proportional sampling, index 1 is uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct Exp4State<R> {
    weights: [R; 2],
    gamma: R,
}

pub const PSS_EXPERT: usize = 0;
pub const UNIFORM_EXPERT: usize = 1;

impl<R: Real> Exp4State<R> {
    pub fn new(gamma: R) -> Result<Self> {
        Self::with_weights([R::one(), R::one()], gamma)
    }

    /// Weights may be zero for one expert but must have positive total.
    pub fn with_weights(weights: [R; 2], gamma: R) -> Result<Self> {
        if !(gamma >= R::zero() && gamma <= R::one()) {
            return Err(SimError::config("gamma must lie in [0, 1]"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= R::zero()))
            || weights[0] + weights[1] <= R::zero()
        {
            return Err(SimError::config(
                "expert weights must be non-negative with positive total",
            ));
        }
        Ok(Exp4State { weights, gamma })
    }

    pub fn weights(&self) -> [R; 2] {
        self.weights
    }

    pub fn gamma(&self) -> R {
        self.gamma
    }

    fn check_advice(advice: &[&[R]; 2]) -> Result<usize> {
        let k = advice[0].len();
        if k < 1 || advice[1].len() != k {
            return Err(SimError::fault("expert advice rows have different lengths"));
        }
        for row in advice {
            let total: R = row.iter().copied().sum();
            if (total - R::one()).abs() > R::lit(1e-9) || row.iter().any(|&e| e < R::zero()) {
                return Err(SimError::fault(format!(
                    "expert advice sums to {total}, not 1"
                )));
            }
        }
        Ok(k)
    }

    /// `(1 - gamma) sum_i w_i e_ij / W + gamma / K`.
    pub fn probabilities(&self, advice: &[&[R]; 2]) -> Result<ProbabilityVector<R>> {
        let k = Self::check_advice(advice)?;
        let total = self.weights[0] + self.weights[1];
        let keep = R::one() - self.gamma;
        let floor = self.gamma / R::count(k);
        let p = (0..k)
            .map(|j| {
                keep * (self.weights[0] * advice[0][j] + self.weights[1] * advice[1][j]) / total
                    + floor
            })
            .collect();
        ProbabilityVector::new(p)
    }

    /// Credits each expert with its advice-weighted share of the importance
    /// estimate of the observed reward.
    pub fn update(
        &mut self,
        advice: &[&[R]; 2],
        probs: &ProbabilityVector<R>,
        arm: usize,
        reward: R,
    ) -> Result<()> {
        check_reward(reward)?;
        let k = Self::check_advice(advice)?;
        if arm >= k || probs.len() != k {
            return Err(SimError::fault("arm or probability vector out of range"));
        }
        let estimate = reward / probs.as_slice()[arm];
        let kr = R::count(k);
        for (w, row) in self.weights.iter_mut().zip(advice) {
            let credit = row[arm] * estimate;
            *w = *w * (self.gamma * credit / kr).exp();
        }
        rescale(&mut self.weights);
        Ok(())
    }

    /// Mixes advice, draws an arm, observes its reward and updates.
    pub fn step<G, F>(&mut self, advice: &[&[R]; 2], rng: &mut G, observe: F) -> Result<(usize, R)>
    where
        G: Rng + ?Sized,
        F: FnOnce(usize) -> Result<R>,
    {
        let probs = self.probabilities(advice)?;
        let arm = probs.sample(rng);
        let x = observe(arm)?;
        self.update(advice, &probs, arm, x)?;
        Ok((arm, x))
    }
}

/// Outcome of a static Exp3 run against the best fixed worker.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretRun {
    pub gamma: f64,
    pub rounds: usize,
    /// Reward of the best single worker in hindsight.
    pub g_max: f64,
    pub g_exp3: f64,
    /// `(e - 1) gamma G_max + K ln K / gamma`.
    pub theorem_bound: f64,
}

impl RegretRun {
    pub fn regret(&self) -> f64 {
        self.g_max - self.g_exp3
    }
}

/// A-priori bound on `G_max` for `rounds` tasks: every reward is at most `1 - S/F`.
pub fn reward_ceiling(rounds: usize, slowest: f64, fastest: f64) -> f64 {
    rounds as f64 * (1.0 - slowest / fastest)
}

/// `min(1, sqrt(K ln K / ((e - 1) g)))`.
pub fn tuned_gamma(arms: usize, g: f64) -> f64 {
    let k = arms as f64;
    (k * k.ln() / ((std::f64::consts::E - 1.0) * g))
        .sqrt()
        .min(1.0)
}

/// `2.63 sqrt(g K ln K)`.
pub fn tuned_regret_bound(arms: usize, g: f64) -> f64 {
    let k = arms as f64;
    2.63 * (g * k * k.ln()).sqrt()
}

/// Plays Exp3 over workers with fixed `speeds` on the task sequence `works`
/// (task durations), with `S_min` and `L_max` taken from the instance.
pub fn exp3_regret_run<R: Real, G: Rng + ?Sized>(
    speeds: &[R],
    works: &[R],
    gamma: R,
    rng: &mut G,
) -> Result<RegretRun> {
    let slowest = speeds.iter().copied().fold(R::infinity(), R::min);
    let longest = works.iter().copied().fold(R::zero(), R::max);
    let mut state = Exp3State::new(speeds.len(), gamma)?;
    let mut per_arm = vec![R::zero(); speeds.len()];
    let mut g_exp3 = R::zero();
    for &work in works {
        let (arm, _) = state.choose(rng);
        for (total, &speed) in per_arm.iter_mut().zip(speeds) {
            *total = *total + reward(work, speed, slowest, longest)?.value;
        }
        let x = reward(work, speeds[arm], slowest, longest)?.value;
        g_exp3 = g_exp3 + x;
        state.update(arm, x)?;
    }
    let g_max = per_arm.iter().copied().fold(R::zero(), R::max).as_f64();
    let k = speeds.len() as f64;
    let gamma = gamma.as_f64();
    Ok(RegretRun {
        gamma,
        rounds: works.len(),
        g_max,
        g_exp3: g_exp3.as_f64(),
        theorem_bound: (std::f64::consts::E - 1.0) * gamma * g_max + k * k.ln() / gamma,
    })
}
