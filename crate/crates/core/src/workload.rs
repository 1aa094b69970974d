//! Worker-speed profiles, speed shocks, and the Poisson job source.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::cluster::{Job, Task};
use crate::engine::sample_exponential;
use crate::error::{Result, SimError};
use crate::scalar::Real;

/// Fifteen speeds from 0.2 to 1.6 in steps of 0.1.
pub const SPEED_SET_S1: [f64; 15] = [
    0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6,
];

/// A skewed fifteen-worker set: five very slow workers and two fast ones.
pub const SPEED_SET_S2: [f64; 15] = [
    0.15, 0.15, 0.15, 0.15, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0, 1.0, 1.0, 2.0, 2.0,
];

/// Squares of 0.1 through 0.9.
pub const SPEED_SET_TPCH: [f64; 9] = [0.01, 0.04, 0.09, 0.16, 0.25, 0.36, 0.49, 0.64, 0.81];

/// Looks up a named speed set (`S1`, `S2`, `TPCH`).
pub fn fixed_set<R: Real>(name: &str) -> Option<Vec<R>> {
    let values: &[f64] = match name {
        "S1" => &SPEED_SET_S1,
        "S2" => &SPEED_SET_S2,
        "TPCH" => &SPEED_SET_TPCH,
        _ => return None,
    };
    Some(values.iter().map(|&v| R::lit(v)).collect())
}

/// Where worker speeds come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedSpec {
    /// `mu_i = 1/k` with `P[k] ∝ k^-exponent` on `1..=cap`.
    Zipf {
        exponent: f64,
        cap: f64,
    },
    /// One of the named sets; `n` must match its size.
    FixedSet(String),
    Explicit(Vec<f64>),
    /// Every worker at the same speed.
    Homogeneous(f64),
}

impl Default for SpeedSpec {
    fn default() -> Self {
        SpeedSpec::Zipf {
            exponent: 2.0,
            cap: 100.0,
        }
    }
}

/// Zipf-distributed speeds with `max/min <= cap`.
pub fn zipf_speeds<R: Real, G: Rng + ?Sized>(
    n: usize,
    exponent: f64,
    cap: f64,
    rng: &mut G,
) -> Result<Vec<R>> {
    if !(exponent > 1.0) {
        return Err(SimError::config("zipf exponent must exceed 1"));
    }
    if !(cap > 1.0 && cap.is_finite()) {
        return Err(SimError::config("zipf cap must exceed 1"));
    }
    let k_max = cap.floor();
    let zipf = Zipf::new(k_max, exponent).map_err(|e| SimError::config(format!("zipf: {e}")))?;
    let mut speeds: Vec<R> = (0..n)
        .map(|_| R::one() / R::lit(zipf.sample(rng)))
        .collect();
    clamp_ratio(&mut speeds, R::lit(cap));
    Ok(speeds)
}

/// Raises the slowest speeds so that `max/min <= cap`.
pub fn clamp_ratio<R: Real>(speeds: &mut [R], cap: R) {
    let max = speeds.iter().copied().fold(R::zero(), R::max);
    let floor = max / cap;
    for s in speeds.iter_mut() {
        if *s < floor {
            *s = floor;
        }
    }
}

impl SpeedSpec {
    /// Draws (or looks up) the initial speed vector for `n` workers.
    pub fn initial<R: Real, G: Rng + ?Sized>(&self, n: usize, rng: &mut G) -> Result<Vec<R>> {
        if n == 0 {
            return Err(SimError::config("cluster.n must be at least 1"));
        }
        let speeds = match self {
            SpeedSpec::Zipf { exponent, cap } => zipf_speeds(n, *exponent, *cap, rng)?,
            SpeedSpec::FixedSet(name) => {
                let set = fixed_set(name)
                    .ok_or_else(|| SimError::config(format!("unknown speed set `{name}`")))?;
                if set.len() != n {
                    return Err(SimError::config(format!(
                        "speed set `{name}` has {} workers but cluster.n = {n}",
                        set.len()
                    )));
                }
                set
            }
            SpeedSpec::Explicit(v) => {
                if v.len() != n {
                    return Err(SimError::config(format!(
                        "explicit speeds list {} workers but cluster.n = {n}",
                        v.len()
                    )));
                }
                v.iter().map(|&x| R::lit(x)).collect()
            }
            SpeedSpec::Homogeneous(x) => vec![R::lit(*x); n],
        };
        validate_speeds(&speeds)?;
        Ok(speeds)
    }

    /// Fresh vector from the same source. Fixed and explicit sets are resampled
    /// with replacement.
    pub fn resample<R: Real, G: Rng + ?Sized>(&self, n: usize, rng: &mut G) -> Result<Vec<R>> {
        match self {
            SpeedSpec::Zipf { .. } => self.initial(n, rng),
            _ => {
                let pool: Vec<R> = self.initial(n, rng)?;
                let mut speeds: Vec<R> = (0..n).map(|_| pool[rng.random_range(0..n)]).collect();
                if speeds.iter().all(|&s| s <= R::zero()) {
                    speeds = pool;
                }
                Ok(speeds)
            }
        }
    }
}

pub fn validate_speeds<R: Real>(speeds: &[R]) -> Result<()> {
    if speeds.iter().any(|s| !(s.is_finite() && *s >= R::zero())) {
        return Err(SimError::config("speeds must be finite and non-negative"));
    }
    if speeds.iter().copied().sum::<R>() <= R::zero() {
        return Err(SimError::config("total speed must be positive"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockMode {
    /// Random permutation of the current speeds; total capacity is unchanged.
    #[default]
    Permute,
    /// Fresh draw from the speed source.
    Resample,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShockSchedule<R> {
    pub period: R,
    pub mode: ShockMode,
    pub enabled: bool,
}

impl<R: Real> ShockSchedule<R> {
    pub fn disabled() -> Self {
        ShockSchedule {
            period: R::infinity(),
            mode: ShockMode::Permute,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.period.is_finite() && self.period > R::zero()) {
            return Err(SimError::config("shocks.period must be positive"));
        }
        Ok(())
    }
}

/// New speed vector after a shock. Learner state is deliberately untouched.
pub fn apply_shock<R: Real, G: Rng + ?Sized>(
    current: &[R],
    source: &SpeedSpec,
    schedule: &ShockSchedule<R>,
    rng: &mut G,
) -> Result<Vec<R>> {
    if !schedule.enabled {
        return Err(SimError::fault("shock applied with shocks disabled"));
    }
    match schedule.mode {
        ShockMode::Permute => {
            let mut next = current.to_vec();
            next.shuffle(rng);
            Ok(next)
        }
        ShockMode::Resample => source.resample(current.len(), rng),
    }
}

/// Job shape and load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadSpec<R> {
    /// Target load ratio; ignored when `lambda` is set.
    pub alpha: Option<R>,
    /// Explicit job arrival rate.
    pub lambda: Option<R>,
    pub tasks_per_job: usize,
    /// Mean of the exponential task-size law.
    pub mean_work: R,
}

impl<R: Real> WorkloadSpec<R> {
    pub fn with_alpha(alpha: R) -> Self {
        WorkloadSpec {
            alpha: Some(alpha),
            lambda: None,
            tasks_per_job: 1,
            mean_work: R::one(),
        }
    }

    pub fn with_lambda(lambda: R) -> Self {
        WorkloadSpec {
            alpha: None,
            lambda: Some(lambda),
            ..Self::with_alpha(R::one())
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks_per_job == 0 {
            return Err(SimError::config(
                "workload.tasks_per_job must be at least 1",
            ));
        }
        if !(self.mean_work.is_finite() && self.mean_work > R::zero()) {
            return Err(SimError::config("workload.mean_work must be positive"));
        }
        match (self.alpha, self.lambda) {
            (_, Some(l)) if !(l.is_finite() && l > R::zero()) => {
                Err(SimError::config("workload.lambda must be positive"))
            }
            (Some(a), None) if !(a.is_finite() && a > R::zero()) => {
                Err(SimError::config("workload.alpha must be positive"))
            }
            (None, None) => Err(SimError::config("workload needs alpha or lambda")),
            _ => Ok(()),
        }
    }

    /// Work carried by one job.
    pub fn work_per_job(&self) -> R {
        R::count(self.tasks_per_job) * self.mean_work
    }

    /// Job arrival rate: the explicit `lambda`, or `alpha * capacity / work_per_job`.
    pub fn arrival_rate(&self, capacity: R) -> R {
        match (self.lambda, self.alpha) {
            (Some(l), _) => l,
            (None, Some(a)) => a * capacity / self.work_per_job(),
            (None, None) => R::zero(),
        }
    }

    /// Load ratio implied by this spec on a cluster of the given capacity.
    pub fn load_ratio(&self, capacity: R) -> R {
        self.arrival_rate(capacity) * self.work_per_job() / capacity
    }

    pub fn draw_work<G: Rng + ?Sized>(&self, rng: &mut G) -> R {
        R::sample_exp1(rng) * self.mean_work
    }

    /// The next job after `now`: exponential gap at rate `lambda`, then
    /// `tasks_per_job` independent task sizes. Task ids start at `first_task_id`.
    pub fn next_job<G: Rng + ?Sized>(
        &self,
        rng: &mut G,
        now: R,
        lambda: R,
        job_id: u64,
        first_task_id: u64,
    ) -> Result<Job<R>> {
        let arrival = now + sample_exponential(rng, lambda)?;
        let tasks = (0..self.tasks_per_job as u64)
            .map(|i| Task::new(first_task_id + i, job_id, self.draw_work(rng), arrival))
            .collect();
        Ok(Job {
            id: job_id,
            arrival_time: arrival,
            tasks,
        })
    }
}
