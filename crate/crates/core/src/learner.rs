//! Online estimation of the arrival rate and of every worker's speed, plus the
//! low-priority benchmark dispatcher that keeps idle or distrusted workers measured.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::sample_exponential;
use crate::error::{Result, SimError};
use crate::policy::uniform_index;
use crate::scalar::Real;

/// Clamp applied to the estimated load ratio when the system looks overloaded.
pub const OVERLOAD_ALPHA_CAP: f64 = 1.0 - 1e-3;

/// Slack subtracted before rounding window lengths up, so that `20 / (1 - 0.8)`
/// evaluates to 100 and not 101.
const CEIL_SLACK: f64 = 1e-9;

/// Windowed mean-interarrival estimator of the arrival rate.
#[derive(Clone, Debug)]
pub struct ArrivalEstimator<R> {
    window: usize,
    gaps: VecDeque<R>,
    last_arrival: Option<R>,
    max_rate: R,
    estimate: Option<R>,
    saturated: bool,
}

impl<R: Real> ArrivalEstimator<R> {
    pub fn new(window: usize, max_rate: R) -> Result<Self> {
        if window == 0 {
            return Err(SimError::config("arrival window must be at least 1"));
        }
        if !(max_rate > R::zero()) {
            return Err(SimError::config(
                "maximum arrival-rate estimate must be positive",
            ));
        }
        Ok(ArrivalEstimator {
            window,
            gaps: VecDeque::with_capacity(window),
            last_arrival: None,
            max_rate,
            estimate: None,
            saturated: false,
        })
    }

    /// Records an arrival and returns the updated estimate, `None` until two
    /// arrivals have been seen.
    pub fn record_arrival(&mut self, now: R) -> Result<Option<R>> {
        if let Some(prev) = self.last_arrival {
            if now < prev {
                return Err(SimError::fault(format!(
                    "arrival at {now} precedes previous arrival at {prev}"
                )));
            }
            if self.gaps.len() == self.window {
                self.gaps.pop_front();
            }
            self.gaps.push_back(now - prev);
            let total: R = self.gaps.iter().copied().sum();
            let count = R::count(self.gaps.len());
            self.saturated = total <= R::zero() || count / total > self.max_rate;
            self.estimate = Some(if self.saturated {
                self.max_rate
            } else {
                count / total
            });
        }
        self.last_arrival = Some(now);
        Ok(self.estimate)
    }

    pub fn estimate(&self) -> Option<R> {
        self.estimate
    }

    /// Whether the last estimate hit the configured cap (all-zero gaps).
    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    pub fn buffered_gaps(&self) -> impl Iterator<Item = &R> {
        self.gaps.iter()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `ceil(c1 ln(n) / eps^2)` completions.
    #[default]
    Theoretical,
    /// `ceil(c / (1 - alpha_hat))` completions.
    Practical,
}

/// Tunables of the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConstants<R> {
    pub window_mode: WindowMode,
    pub c1: R,
    pub c: R,
    /// Benchmark-rate constant.
    pub c0: R,
    /// Interarrival gaps averaged by the arrival estimator.
    pub arrival_window: usize,
    /// Minimum guaranteed total throughput, in work per unit time.
    pub mu_bar: R,
    /// Arrival-rate prior used until two arrivals are seen.
    pub initial_lambda: R,
    /// Speed assumed for a worker until its first full window; `None` means
    /// `mu_bar / n`. Zero starts every worker unmeasured.
    pub initial_speed: Option<R>,
    /// Work brought in by one job arrival (`tasks_per_job * mean_work`).
    pub work_per_arrival: R,
    pub mean_work: R,
    /// Most completions kept per worker.
    pub max_window: usize,
    /// Cap on the arrival-rate estimate.
    pub max_lambda: R,
}

impl<R: Real> LearnerConstants<R> {
    /// Defaults: `c1 = 4`, `c = 20`, `c0 = 0.1`, `S = 100`, prior `0.5 mu_bar`.
    pub fn with_mu_bar(mu_bar: R) -> Self {
        LearnerConstants {
            window_mode: WindowMode::Theoretical,
            c1: R::lit(4.0),
            c: R::lit(20.0),
            c0: R::lit(0.1),
            arrival_window: 100,
            mu_bar,
            initial_lambda: mu_bar * R::lit(0.5),
            initial_speed: None,
            work_per_arrival: R::one(),
            mean_work: R::one(),
            max_window: 1 << 20,
            max_lambda: R::lit(1e12),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: R| x.is_finite() && x > R::zero();
        if !positive(self.mu_bar) {
            return Err(SimError::config("learner.mu_bar must be positive"));
        }
        if !positive(self.c1) || !positive(self.c) {
            return Err(SimError::config(
                "learner window constants must be positive",
            ));
        }
        if !(self.c0 >= R::zero() && self.c0 <= R::one()) {
            return Err(SimError::config("learner.c0 must lie in [0, 1]"));
        }
        if self.c0 > R::lit(0.1) {
            log::warn!(
                "c0 = {} exceeds 0.1; benchmark load may crowd out real work",
                self.c0
            );
        }
        if !positive(self.initial_lambda) {
            return Err(SimError::config("learner.initial_lambda must be positive"));
        }
        if let Some(v) = self.initial_speed {
            if !(v.is_finite() && v >= R::zero()) {
                return Err(SimError::config(
                    "learner.initial_speed must be non-negative",
                ));
            }
        }
        if !positive(self.work_per_arrival) || !positive(self.mean_work) {
            return Err(SimError::config("task work must be positive"));
        }
        if self.arrival_window == 0 || self.max_window == 0 {
            return Err(SimError::config("learner windows must be at least 1"));
        }
        Ok(())
    }
}

/// Quantities derived from the current load estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnerParams<R> {
    pub alpha_hat: R,
    /// Tolerated relative underestimate.
    pub epsilon: R,
    /// Slow-worker cutoff rate.
    pub mu_star: R,
    /// Completions averaged per estimate.
    pub window_len: usize,
    /// The estimate reached `mu_bar` and was clamped.
    pub overloaded: bool,
}

impl<R: Real> LearnerParams<R> {
    /// Longest span over which `window_len` completions may be collected.
    pub fn timeout(&self) -> R {
        (R::one() + self.epsilon) * R::count(self.window_len) / self.mu_star
    }
}

fn ceil_count<R: Real>(x: R) -> usize {
    (x - R::lit(CEIL_SLACK))
        .ceil()
        .max(R::one())
        .to_usize()
        .unwrap_or(usize::MAX)
}

/// Load ratio, tolerance, cutoff and window length for an arrival estimate.
pub fn derive_params<R: Real>(
    lambda_hat: R,
    n: usize,
    constants: &LearnerConstants<R>,
) -> Result<LearnerParams<R>> {
    if n == 0 {
        return Err(SimError::config("learner needs at least one worker"));
    }
    if !(lambda_hat.is_finite() && lambda_hat > R::zero()) {
        return Err(SimError::config(format!(
            "arrival estimate must be positive, got {lambda_hat}"
        )));
    }
    let mut alpha_hat = lambda_hat * constants.work_per_arrival / constants.mu_bar;
    let cap = R::lit(OVERLOAD_ALPHA_CAP);
    let overloaded = alpha_hat >= R::one();
    if overloaded {
        alpha_hat = cap;
    } else {
        alpha_hat = alpha_hat.min(cap);
    }
    let slack = R::one() - alpha_hat;
    let epsilon = R::lit(0.3) * slack;
    let mu_star = slack / R::lit(10.0);
    let window_len = match constants.window_mode {
        WindowMode::Theoretical => {
            ceil_count(constants.c1 * R::count(n).ln() / (epsilon * epsilon))
        }
        WindowMode::Practical => ceil_count(constants.c / slack),
    };
    Ok(LearnerParams {
        alpha_hat,
        epsilon,
        mu_star,
        window_len,
        overloaded,
    })
}

/// Recent `(start, finish)` pairs of one worker.
#[derive(Clone, Debug, Default)]
pub struct WorkerWindow<R> {
    entries: VecDeque<(R, R)>,
}

impl<R: Real> WorkerWindow<R> {
    pub fn new() -> Self {
        WorkerWindow {
            entries: VecDeque::new(),
        }
    }

    /// Appends a completion and trims to the newest `keep` entries.
    pub fn push(&mut self, start: R, finish: R, keep: usize) {
        self.entries.push_back((start, finish));
        while self.entries.len() > keep.max(1) {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Speed estimate from the newest `window_len` completions.
///
/// Zero when the window is short or when collecting it took longer than
/// `(1 + eps) L / mu*` (boundary inclusive).
pub fn aggregate<R: Real>(
    window: &WorkerWindow<R>,
    params: &LearnerParams<R>,
    mean_work: R,
) -> Result<R> {
    let l = params.window_len;
    if l == 0 || window.len() < l {
        return Ok(R::zero());
    }
    let recent = window.entries.range(window.len() - l..);
    let oldest_start = window.entries[window.len() - l].0;
    let newest_finish = window.entries[window.len() - 1].1;
    if newest_finish - oldest_start > params.timeout() {
        return Ok(R::zero());
    }
    let total: R = recent.map(|&(s, f)| f - s).sum();
    let mean = total / R::count(l);
    if !(mean > R::zero()) {
        return Err(SimError::fault("mean completion duration is not positive"));
    }
    Ok((R::one() - params.epsilon) * mean_work / mean)
}

/// Poisson source of low-priority benchmark tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkDispatcher<R> {
    pub c0: R,
}

impl<R: Real> BenchmarkDispatcher<R> {
    /// Benchmark tasks per unit time: `c0 * max(mu_bar - offered work, 0) / mean_work`.
    pub fn rate(&self, mu_bar: R, lambda_hat: R, work_per_arrival: R, mean_work: R) -> R {
        let spare = (mu_bar - lambda_hat * work_per_arrival).max(R::zero());
        self.c0 * spare / mean_work
    }

    /// Gap to the next benchmark and the uniformly chosen target worker, or
    /// `None` while the dispatcher is dormant.
    pub fn next_benchmark<G: Rng + ?Sized>(
        &self,
        rate: R,
        n: usize,
        rng: &mut G,
    ) -> Result<Option<(R, usize)>> {
        if n == 0 {
            return Err(SimError::config("no workers"));
        }
        if !(rate > R::zero()) {
            return Ok(None);
        }
        let gap = sample_exponential(rng, rate)?;
        Ok(Some((gap, uniform_index::<R, G>(rng, n))))
    }
}

/// Whether real plus benchmark work stays below capacity.
pub fn offered_load_within_capacity<R: Real>(
    lambda_work: R,
    lambda_hat_work: R,
    mu_bar: R,
    c0: R,
    capacity: R,
) -> bool {
    lambda_work + c0 * (mu_bar - lambda_hat_work).max(R::zero()) < capacity
}

/// Arrival estimator, per-worker windows and current estimates for one run.
#[derive(Clone, Debug)]
pub struct Learner<R> {
    constants: LearnerConstants<R>,
    estimator: ArrivalEstimator<R>,
    windows: Vec<WorkerWindow<R>>,
    mu_hat: Vec<R>,
    params: LearnerParams<R>,
    retain: usize,
    overload_warned: bool,
}

impl<R: Real> Learner<R> {
    pub fn new(n: usize, constants: LearnerConstants<R>) -> Result<Self> {
        constants.validate()?;
        let estimator = ArrivalEstimator::new(constants.arrival_window, constants.max_lambda)?;
        let params = derive_params(constants.initial_lambda, n, &constants)?;
        let prior = constants
            .initial_speed
            .unwrap_or(constants.mu_bar / R::count(n));
        Ok(Learner {
            retain: params.window_len.min(constants.max_window),
            estimator,
            windows: vec![WorkerWindow::new(); n],
            mu_hat: vec![prior; n],
            params,
            constants,
            overload_warned: false,
        })
    }

    pub fn constants(&self) -> &LearnerConstants<R> {
        &self.constants
    }

    pub fn params(&self) -> &LearnerParams<R> {
        &self.params
    }

    pub fn mu_hat(&self) -> &[R] {
        &self.mu_hat
    }

    /// Current arrival estimate, or the prior before two arrivals.
    pub fn lambda_hat(&self) -> R {
        self.estimator
            .estimate()
            .unwrap_or(self.constants.initial_lambda)
    }

    pub fn on_arrival(&mut self, now: R) -> Result<()> {
        if let Some(lambda_hat) = self.estimator.record_arrival(now)? {
            self.params = derive_params(lambda_hat, self.windows.len(), &self.constants)?;
            self.retain = self
                .retain
                .max(self.params.window_len)
                .min(self.constants.max_window);
            if self.params.overloaded && !self.overload_warned {
                log::debug!("arrival estimate {lambda_hat} reaches mu_bar; load ratio clamped");
                self.overload_warned = true;
            }
        }
        Ok(())
    }

    /// Feeds a completion (real or benchmark) and returns the worker's new estimate.
    pub fn on_completion(&mut self, worker: usize, start: R, finish: R) -> Result<R> {
        let window = self
            .windows
            .get_mut(worker)
            .ok_or_else(|| SimError::fault(format!("unknown worker {worker}")))?;
        window.push(start, finish, self.retain);
        let held = window.len();
        let fresh_span = window
            .entries
            .front()
            .map_or(R::zero(), |&(s, _)| finish - s)
            <= self.params.timeout();
        let previous = self.mu_hat[worker];
        // A short window (first fill, or L just grew) keeps the current
        // estimate until it fills or times out.
        let estimate = if held < self.params.window_len && previous > R::zero() && fresh_span {
            previous
        } else {
            aggregate(window, &self.params, self.constants.mean_work)?
        };
        self.mu_hat[worker] = estimate;
        Ok(estimate)
    }

    pub fn benchmark_rate(&self) -> R {
        BenchmarkDispatcher {
            c0: self.constants.c0,
        }
        .rate(
            self.constants.mu_bar,
            self.lambda_hat(),
            self.constants.work_per_arrival,
            self.constants.mean_work,
        )
    }

    /// Mean absolute estimation error `||mu_hat - mu||_1 / n`.
    pub fn error_l1(&self, mu: &[R]) -> R {
        let n = R::count(self.mu_hat.len().max(1));
        self.mu_hat
            .iter()
            .zip(mu)
            .map(|(a, b)| (*a - *b).abs())
            .sum::<R>()
            / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feed(est: &mut ArrivalEstimator<f64>, gaps: &[f64]) -> Option<f64> {
        let mut now = 0.0;
        let mut last = est.record_arrival(now).unwrap();
        for g in gaps {
            now += g;
            last = est.record_arrival(now).unwrap();
        }
        last
    }

    #[test]
    fn arrival_rate_is_reciprocal_mean_gap() {
        let mut est = ArrivalEstimator::new(100, 1e9).unwrap();
        assert_eq!(feed(&mut est, &[2.0, 2.0, 2.0, 2.0]), Some(0.5));
    }

    #[test]
    fn arrival_window_evicts_oldest() {
        let mut est = ArrivalEstimator::new(3, 1e9).unwrap();
        let rate = feed(&mut est, &[1.0, 1.0, 4.0, 4.0]).unwrap();
        assert_eq!(
            est.buffered_gaps().copied().collect::<Vec<_>>(),
            vec![1.0, 4.0, 4.0]
        );
        assert!((rate - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn arrival_estimate_undefined_after_one_arrival() {
        let mut est = ArrivalEstimator::<f64>::new(10, 1e9).unwrap();
        assert_eq!(est.record_arrival(3.0).unwrap(), None);
        let learner = Learner::new(4, LearnerConstants::with_mu_bar(10.0)).unwrap();
        assert_eq!(learner.lambda_hat(), 5.0);
    }

    #[test]
    fn simultaneous_arrivals_saturate() {
        let mut est = ArrivalEstimator::new(4, 1e6).unwrap();
        assert_eq!(feed(&mut est, &[0.0, 0.0]), Some(1e6));
        assert!(est.is_saturated());
        assert!(est.record_arrival(-1.0).is_err());
    }

    #[test]
    fn params_at_alpha_point_eight() {
        let mut k = LearnerConstants::with_mu_bar(1.0f64);
        let p = derive_params(0.8, 10, &k).unwrap();
        assert!((p.alpha_hat - 0.8).abs() < 1e-15);
        assert!((p.epsilon - 0.06).abs() < 1e-12);
        assert!((p.mu_star - 0.02).abs() < 1e-12);
        k.window_mode = WindowMode::Practical;
        k.c = 20.0;
        assert_eq!(derive_params(0.8, 10, &k).unwrap().window_len, 100);
    }

    #[test]
    fn params_theoretical_window() {
        let k = LearnerConstants::with_mu_bar(13.5f64);
        // alpha 0.5 => eps 0.15, L = ceil(4 ln 15 / 0.0225) = ceil(481.43..)
        let p = derive_params(6.75, 15, &k).unwrap();
        assert!((p.epsilon - 0.15).abs() < 1e-12);
        assert_eq!(p.window_len, 482);
        // ln(1) = 0 still leaves a window of one completion
        assert_eq!(derive_params(6.75, 1, &k).unwrap().window_len, 1);
    }

    #[test]
    fn params_low_load_limit() {
        let k = LearnerConstants::with_mu_bar(1.0f64);
        let p = derive_params(1e-12, 4, &k).unwrap();
        assert!((p.epsilon - 0.3).abs() < 1e-9);
    }

    #[test]
    fn overload_clamps_alpha() {
        let k = LearnerConstants::with_mu_bar(10.0f64);
        let p = derive_params(12.0, 4, &k).unwrap();
        assert!(p.overloaded);
        assert_eq!(p.alpha_hat, OVERLOAD_ALPHA_CAP);
        assert!(p.epsilon > 0.0);
        assert!(derive_params(0.0, 4, &k).is_err());
        assert!(derive_params(1.0, 0, &k).is_err());
    }

    fn params(eps: f64, mu_star: f64, l: usize) -> LearnerParams<f64> {
        LearnerParams {
            alpha_hat: 0.5,
            epsilon: eps,
            mu_star,
            window_len: l,
            overloaded: false,
        }
    }

    #[test]
    fn aggregate_mean_duration() {
        let mut w = WorkerWindow::new();
        for i in 0..4 {
            let s = i as f64;
            w.push(s, s + 0.5, 10);
        }
        let mu = aggregate(&w, &params(0.06, 0.02, 4), 1.0).unwrap();
        assert!((mu - 1.88).abs() < 1e-12);
    }

    #[test]
    fn aggregate_short_window_is_zero() {
        let mut w = WorkerWindow::new();
        w.push(0.0, 1.0, 10);
        assert_eq!(aggregate(&w, &params(0.1, 0.1, 2), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_timeout_boundary_inclusive() {
        // limit = 1.5 * 2 / 0.25 = 12
        let p = params(0.5, 0.25, 2);
        let mut w = WorkerWindow::new();
        w.push(0.0, 6.0, 2);
        w.push(6.0, 12.0, 2);
        assert!(aggregate(&w, &p, 1.0).unwrap() > 0.0);
        let mut late = WorkerWindow::new();
        late.push(0.0, 6.0, 2);
        late.push(6.5, 12.5, 2);
        assert_eq!(aggregate(&late, &p, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_rejects_zero_durations() {
        let mut w = WorkerWindow::new();
        w.push(1.0, 1.0, 2);
        w.push(1.0, 1.0, 2);
        assert!(aggregate(&w, &params(0.1, 0.1, 2), 1.0).is_err());
    }

    #[test]
    fn very_slow_worker_is_discarded() {
        // mu = 0.001 against mu* = 0.02: L completions take ~L/0.001
        let k = LearnerConstants::with_mu_bar(1.0f64);
        let p = derive_params(0.8, 10, &k).unwrap();
        let mut w = WorkerWindow::new();
        let mut now = 0.0;
        for _ in 0..p.window_len {
            w.push(now, now + 1000.0, p.window_len);
            now += 1000.0;
        }
        assert_eq!(aggregate(&w, &p, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn benchmark_rate_and_dormancy() {
        let d = BenchmarkDispatcher { c0: 0.1f64 };
        let rate = d.rate(15.0, 12.0, 1.0, 1.0);
        assert!((rate - 0.3).abs() < 1e-12);
        assert!((1.0 / rate - 10.0 / 3.0).abs() < 1e-9);
        assert_eq!(d.rate(15.0, 15.0, 1.0, 1.0), 0.0);
        assert_eq!(d.rate(15.0, 20.0, 1.0, 1.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(d.next_benchmark(0.0, 4, &mut rng).unwrap(), None);
    }

    #[test]
    fn benchmark_gap_mean_and_uniform_targets() {
        let d = BenchmarkDispatcher { c0: 0.1f64 };
        let rate = d.rate(15.0, 12.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10;
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        let mut gap_sum = 0.0;
        for _ in 0..draws {
            let (gap, w) = d.next_benchmark(rate, n, &mut rng).unwrap().unwrap();
            gap_sum += gap;
            counts[w] += 1;
        }
        assert!((gap_sum / draws as f64 - 10.0 / 3.0).abs() < 0.05);
        for c in counts {
            // 1/n +- 1% absolute
            assert!((c as f64 / draws as f64 - 0.1).abs() < 0.01);
        }
    }

    #[test]
    fn unmeasured_workers_start_at_prior() {
        let k = LearnerConstants::with_mu_bar(8.0f64);
        let mut learner = Learner::new(4, k.clone()).unwrap();
        assert_eq!(learner.mu_hat(), &[2.0; 4]);
        learner.on_completion(0, 0.0, 0.5).unwrap();
        assert_eq!(learner.mu_hat()[0], 2.0);
        let cold = Learner::new(
            4,
            LearnerConstants {
                initial_speed: Some(0.0),
                ..k
            },
        )
        .unwrap();
        assert_eq!(cold.mu_hat(), &[0.0; 4]);
    }

    #[test]
    fn growing_window_keeps_estimate() {
        let mut k = LearnerConstants::with_mu_bar(10.0f64);
        k.window_mode = WindowMode::Practical;
        k.initial_lambda = 5.0;
        let mut learner = Learner::new(2, k).unwrap();
        let l = learner.params().window_len;
        for i in 0..l {
            learner.on_completion(0, i as f64, i as f64 + 0.5).unwrap();
        }
        let est = learner.mu_hat()[0];
        assert!((est - (1.0 - learner.params().epsilon) * 2.0).abs() < 1e-9);
        // alpha_hat 0.9 doubles L past what the window holds
        let mut now = l as f64;
        for _ in 0..101 {
            learner.on_arrival(now).unwrap();
            now += 1.0 / 9.0;
        }
        assert!(learner.params().window_len > l);
        learner.on_completion(0, now, now + 0.5).unwrap();
        assert_eq!(learner.mu_hat()[0], est);
    }

    #[test]
    fn learner_tracks_memoryless_worker() {
        let mut k = LearnerConstants::with_mu_bar(2.0f64);
        k.window_mode = WindowMode::Practical;
        let mut learner = Learner::new(1, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut now = 0.0;
        for _ in 0..5000 {
            now += sample_exponential(&mut rng, 1.0).unwrap();
            learner.on_arrival(now).unwrap();
            let d = sample_exponential(&mut rng, 2.0).unwrap();
            learner.on_completion(0, now, now + d).unwrap();
        }
        let p = *learner.params();
        let est = learner.mu_hat()[0];
        assert!(
            est > (1.0 - 2.0 * p.epsilon) * 2.0 && est < (1.0 + p.epsilon) * 2.0,
            "{est}"
        );
    }

    proptest! {
        #[test]
        fn epsilon_bounded_below_point_three(lambda in 0.01f64..0.99) {
            let k = LearnerConstants::with_mu_bar(1.0f64);
            let p = derive_params(lambda, 16, &k).unwrap();
            prop_assert!(p.epsilon > 0.0 && p.epsilon < 0.3);
            prop_assert!(p.window_len >= 1);
        }

        #[test]
        fn benchmark_load_stays_below_capacity(
            capacity in 1.0f64..100.0,
            mu_bar_frac in 0.1f64..1.0,
            lambda_frac in 0.0f64..0.999,
            hat_frac in 1.0f64..2.0,
            c0 in 0.0f64..=0.1,
        ) {
            let mu_bar = capacity * mu_bar_frac;
            let lambda = mu_bar * lambda_frac;
            prop_assert!(offered_load_within_capacity(lambda, lambda * hat_frac, mu_bar, c0, capacity));
        }
    }
}
