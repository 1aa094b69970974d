//! Per-run metric collection and the resulting report.

use crate::error::{Result, SimError};
use crate::scalar::Real;

/// Percentile ranks reported for response times.
pub const PERCENTILE_RANKS: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank<R: Real>(sorted: &[R], pct: f64) -> Option<R> {
    if sorted.is_empty() || !(0.0..=100.0).contains(&pct) {
        return None;
    }
    let rank = (pct / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Percentiles<R> {
    /// Values at [`PERCENTILE_RANKS`], in order.
    pub values: [R; 5],
}

impl<R: Real> Percentiles<R> {
    /// Sorts `samples` in place and reads off the nearest-rank percentiles.
    pub fn from_samples(samples: &mut [R]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let mut values = [R::zero(); 5];
        for (v, &p) in values.iter_mut().zip(&PERCENTILE_RANKS) {
            *v = nearest_rank(samples, p)?;
        }
        Some(Percentiles { values })
    }

    pub fn median(&self) -> R {
        self.values[2]
    }
}

/// Snapshot counts of one worker's queue length.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueueHistogram {
    counts: Vec<u64>,
}

impl QueueHistogram {
    pub fn record(&mut self, load: usize) {
        if self.counts.len() <= load {
            self.counts.resize(load + 1, 0);
        }
        self.counts[load] += 1;
    }

    /// `counts()[q]` is the number of snapshots that saw length `q`.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Empirical `P[Q >= k]`; zero when nothing was recorded.
    pub fn tail(&self, k: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let above: u64 = self.counts.iter().skip(k).sum();
        above as f64 / total as f64
    }

    pub fn mean(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let sum: u64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(q, &c)| q as u64 * c)
            .sum();
        sum as f64 / total as f64
    }

    /// Total-variation distance between the two empirical laws.
    pub fn total_variation(&self, other: &QueueHistogram) -> f64 {
        let (ta, tb) = (self.total().max(1) as f64, other.total().max(1) as f64);
        let len = self.counts.len().max(other.counts.len());
        let at = |h: &QueueHistogram, q: usize| h.counts.get(q).copied().unwrap_or(0) as f64;
        0.5 * (0..len)
            .map(|q| (at(self, q) / ta - at(other, q) / tb).abs())
            .sum::<f64>()
    }
}

/// One row of the periodic time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint<R> {
    pub time: R,
    pub max_queue: usize,
    pub l1: Option<R>,
    pub l0: Option<R>,
    pub lambda_hat: Option<R>,
    /// `||mu_hat - mu||_1 / n`.
    pub mu_hat_error: Option<R>,
    /// Taken after warm-up.
    pub stationary: bool,
}

/// Real arrivals into all workers sharing one configured speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRate<R> {
    pub speed: R,
    pub workers: usize,
    pub arrival_rate: R,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerSummary<R> {
    pub id: usize,
    /// Speed at the start of the run.
    pub speed: R,
    /// Real tasks routed here after warm-up.
    pub arrivals: u64,
    /// Time-sampled mean of the real load after warm-up.
    pub mean_load: f64,
    /// Mean response of real tasks served here after warm-up.
    pub mean_task_response: Option<R>,
}

/// Identification of a run in reports and CSV rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta<R> {
    pub policy: String,
    pub seed: u64,
    pub alpha: R,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport<R> {
    pub meta: RunMeta<R>,
    /// Job response-time percentiles; `None` when no job finished after warm-up.
    pub response: Option<Percentiles<R>>,
    pub mean_response: Option<R>,
    pub mean_wait: Option<R>,
    pub jobs_completed: u64,
    pub timeseries: Vec<SamplePoint<R>>,
    pub histograms: Vec<QueueHistogram>,
    pub group_rates: Vec<GroupRate<R>>,
    pub workers: Vec<WorkerSummary<R>>,
    /// Real tasks completed per unit time after warm-up.
    pub throughput: R,
    /// Share of busy time spent on benchmark tasks.
    pub benchmark_overhead: R,
    /// Largest queue seen at any stationary sample.
    pub max_queue: Option<usize>,
    pub learn_error_final: Option<R>,
    /// Events processed, excluding metric samples.
    pub events: u64,
    pub end_time: R,
    pub stationary_time: R,
}

impl<R: Real> MetricsReport<R> {
    pub fn n(&self) -> usize {
        self.histograms.len()
    }

    /// Empirical `P[Q_i >= k]` for one worker.
    pub fn worker_tail(&self, worker: usize, k: usize) -> f64 {
        self.histograms[worker].tail(k)
    }

    /// Expected fraction of workers holding at least `k` tasks.
    pub fn fraction_tail(&self, k: usize) -> f64 {
        let n = self.histograms.len().max(1) as f64;
        self.histograms.iter().map(|h| h.tail(k)).sum::<f64>() / n
    }

    /// Speed-weighted fraction of workers holding at least `k` tasks,
    /// normalized so level 0 is 1.
    pub fn weighted_tail(&self, k: usize) -> f64 {
        let total: f64 = self.workers.iter().map(|w| w.speed.as_f64()).sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.workers
            .iter()
            .zip(&self.histograms)
            .map(|(w, h)| w.speed.as_f64() / total * h.tail(k))
            .sum()
    }

    /// Mean over stationary samples of the largest queue.
    pub fn mean_max_queue(&self) -> Option<f64> {
        let (sum, count) = self
            .timeseries
            .iter()
            .filter(|s| s.stationary)
            .fold((0.0, 0usize), |(s, c), p| (s + p.max_queue as f64, c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    pub fn stationary_samples(&self) -> usize {
        self.timeseries.iter().filter(|s| s.stationary).count()
    }
}

/// Accumulates metrics for one run.
#[derive(Clone, Debug)]
pub struct MetricsCollector<R> {
    speeds: Vec<R>,
    stationary_since: Option<R>,
    response_times: Vec<R>,
    wait_sum: R,
    wait_count: u64,
    samples: Vec<SamplePoint<R>>,
    histograms: Vec<QueueHistogram>,
    arrivals: Vec<u64>,
    task_response_sum: Vec<R>,
    task_response_count: Vec<u64>,
    completed: u64,
}

impl<R: Real> MetricsCollector<R> {
    /// `speeds` are the initial worker speeds, used to group arrival rates.
    pub fn new(speeds: &[R]) -> Self {
        let n = speeds.len();
        MetricsCollector {
            speeds: speeds.to_vec(),
            stationary_since: None,
            response_times: Vec::new(),
            wait_sum: R::zero(),
            wait_count: 0,
            samples: Vec::new(),
            histograms: vec![QueueHistogram::default(); n],
            arrivals: vec![0; n],
            task_response_sum: vec![R::zero(); n],
            task_response_count: vec![0; n],
            completed: 0,
        }
    }

    /// Marks the end of warm-up.
    pub fn begin_stationary(&mut self, now: R) {
        if self.stationary_since.is_none() {
            self.stationary_since = Some(now);
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.stationary_since.is_some()
    }

    pub fn record_arrival(&mut self, worker: usize) {
        if self.is_stationary() {
            self.arrivals[worker] += 1;
        }
    }

    /// A real task finished; `counted` says whether its job arrived after warm-up.
    pub fn record_task(&mut self, worker: usize, wait: R, response: R, counted: bool) {
        if !self.is_stationary() {
            return;
        }
        self.completed += 1;
        if counted {
            self.wait_sum = self.wait_sum + wait;
            self.wait_count += 1;
            self.task_response_sum[worker] = self.task_response_sum[worker] + response;
            self.task_response_count[worker] += 1;
        }
    }

    pub fn record_job(&mut self, response: R) {
        self.response_times.push(response);
    }

    pub fn record_sample(
        &mut self,
        now: R,
        loads: &[usize],
        lambda_hat: Option<R>,
        mu_hat_error: Option<R>,
    ) {
        let stationary = self.is_stationary();
        if stationary {
            for (h, &q) in self.histograms.iter_mut().zip(loads) {
                h.record(q);
            }
        }
        self.samples.push(SamplePoint {
            time: now,
            max_queue: loads.iter().copied().max().unwrap_or(0),
            l1: None,
            l0: None,
            lambda_hat,
            mu_hat_error,
            stationary,
        });
    }

    pub fn samples(&self) -> &[SamplePoint<R>] {
        &self.samples
    }

    /// Builds the report. `busy` and `benchmark_busy` are total worker busy times.
    pub fn finish(
        mut self,
        meta: RunMeta<R>,
        end_time: R,
        events: u64,
        busy: R,
        benchmark_busy: R,
        learn_error_final: Option<R>,
    ) -> Result<MetricsReport<R>> {
        if meta.n != self.speeds.len() {
            return Err(SimError::fault("report size differs from collector size"));
        }
        let stationary_time = self
            .stationary_since
            .map(|t| (end_time - t).max(R::zero()))
            .unwrap_or(R::zero());
        let jobs_completed = self.response_times.len() as u64;
        let mean_response = mean(&self.response_times);
        let response = Percentiles::from_samples(&mut self.response_times);
        let mean_wait =
            (self.wait_count > 0).then(|| self.wait_sum / R::count(self.wait_count as usize));
        let per_time = |count: u64| {
            if stationary_time > R::zero() {
                R::count(count as usize) / stationary_time
            } else {
                R::zero()
            }
        };

        let mut order: Vec<usize> = (0..self.speeds.len()).collect();
        order.sort_by(|&a, &b| {
            self.speeds[a]
                .partial_cmp(&self.speeds[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut group_rates: Vec<GroupRate<R>> = Vec::new();
        let mut group_arrivals: Vec<u64> = Vec::new();
        for &i in &order {
            match group_rates.last_mut() {
                Some(g) if g.speed == self.speeds[i] => {
                    g.workers += 1;
                    *group_arrivals.last_mut().expect("parallel vectors") += self.arrivals[i];
                }
                _ => {
                    group_rates.push(GroupRate {
                        speed: self.speeds[i],
                        workers: 1,
                        arrival_rate: R::zero(),
                    });
                    group_arrivals.push(self.arrivals[i]);
                }
            }
        }
        for (g, &a) in group_rates.iter_mut().zip(&group_arrivals) {
            g.arrival_rate = per_time(a);
        }

        let workers = (0..self.speeds.len())
            .map(|i| WorkerSummary {
                id: i,
                speed: self.speeds[i],
                arrivals: self.arrivals[i],
                mean_load: self.histograms[i].mean(),
                mean_task_response: (self.task_response_count[i] > 0).then(|| {
                    self.task_response_sum[i] / R::count(self.task_response_count[i] as usize)
                }),
            })
            .collect();
        let max_queue = self
            .samples
            .iter()
            .filter(|s| s.stationary)
            .map(|s| s.max_queue)
            .max();
        let benchmark_overhead = if busy > R::zero() {
            benchmark_busy / busy
        } else {
            R::zero()
        };
        Ok(MetricsReport {
            meta,
            response,
            mean_response,
            mean_wait,
            jobs_completed,
            timeseries: self.samples,
            histograms: self.histograms,
            group_rates,
            workers,
            throughput: per_time(self.completed),
            benchmark_overhead,
            max_queue,
            learn_error_final,
            events,
            end_time,
            stationary_time,
        })
    }
}

fn mean<R: Real>(values: &[R]) -> Option<R> {
    (!values.is_empty()).then(|| values.iter().copied().sum::<R>() / R::count(values.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_by_hand() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 5.0), Some(1.0));
        assert_eq!(nearest_rank(&v, 25.0), Some(3.0));
        assert_eq!(nearest_rank(&v, 50.0), Some(5.0));
        assert_eq!(nearest_rank(&v, 95.0), Some(10.0));
        assert_eq!(nearest_rank::<f64>(&[], 50.0), None);
        let mut samples = vec![4.0, 1.0, 3.0, 2.0];
        let p = Percentiles::from_samples(&mut samples).unwrap();
        assert_eq!(p.values, [1.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn histogram_tails() {
        let mut h = QueueHistogram::default();
        for q in [0, 0, 1, 2, 2, 5] {
            h.record(q);
        }
        assert_eq!(h.total(), 6);
        assert_eq!(h.tail(0), 1.0);
        assert!((h.tail(2) - 0.5).abs() < 1e-12);
        assert_eq!(h.tail(6), 0.0);
        assert!((h.mean() - 10.0 / 6.0).abs() < 1e-12);
        assert_eq!(h.total_variation(&h.clone()), 0.0);
        let mut g = QueueHistogram::default();
        g.record(7);
        assert!((h.total_variation(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collector_groups_speeds_and_skips_warmup() {
        let mut c = MetricsCollector::new(&[1.0f64, 6.0, 1.0]);
        c.record_arrival(0);
        c.record_sample(1.0, &[3, 0, 1], None, None);
        c.begin_stationary(2.0);
        c.record_arrival(0);
        c.record_arrival(2);
        c.record_arrival(1);
        c.record_sample(3.0, &[1, 2, 0], Some(4.0), None);
        c.record_task(1, 0.5, 1.0, true);
        c.record_job(1.0);
        let meta = RunMeta {
            policy: "pot".into(),
            seed: 1,
            alpha: 0.5,
            n: 3,
        };
        let r = c.finish(meta, 12.0, 10, 4.0, 1.0, None).unwrap();
        assert_eq!(r.stationary_time, 10.0);
        assert_eq!(r.group_rates.len(), 2);
        assert_eq!(r.group_rates[0].speed, 1.0);
        assert_eq!(r.group_rates[0].workers, 2);
        assert!((r.group_rates[0].arrival_rate - 0.2).abs() < 1e-12);
        assert_eq!(r.max_queue, Some(2));
        assert_eq!(r.timeseries.len(), 2);
        assert_eq!(r.histograms[0].total(), 1);
        assert_eq!(r.benchmark_overhead, 0.25);
        assert_eq!(r.workers[1].mean_task_response, Some(1.0));
        assert_eq!(r.mean_max_queue(), Some(2.0));
    }

    proptest! {
        #[test]
        fn percentiles_non_decreasing(mut v in proptest::collection::vec(0.0f64..1e6, 1..200)) {
            let p = Percentiles::from_samples(&mut v).unwrap();
            for w in p.values.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }

        #[test]
        fn histograms_sum_to_sample_count(loads in proptest::collection::vec(proptest::collection::vec(0usize..20, 4), 1..50)) {
            let mut c = MetricsCollector::new(&[1.0f64; 4]);
            c.begin_stationary(0.0);
            for (t, l) in loads.iter().enumerate() {
                c.record_sample(t as f64, l, None, None);
            }
            let meta = RunMeta { policy: "pss".into(), seed: 0, alpha: 0.5, n: 4 };
            let r = c.finish(meta, loads.len() as f64, 0, 0.0, 0.0, None).unwrap();
            for h in &r.histograms {
                prop_assert_eq!(h.total(), loads.len() as u64);
            }
        }
    }
}
