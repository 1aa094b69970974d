//! Workers, tasks and jobs.
//!
//! A worker runs one task at a time without preemption. Real tasks always go
//! ahead of queued benchmark tasks; a benchmark already in service finishes first.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceMode {
    /// Fresh exponential draw per task; the task's work is ignored.
    #[default]
    Memoryless,
    /// Duration is exactly `work / rate`.
    SleepTask,
}

/// How long a task occupies a worker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServiceModel<R> {
    pub mode: ServiceMode,
    /// Mean task work; memoryless draws use rate `mu / mean_work` so both modes
    /// put the same load on a worker.
    pub mean_work: R,
}

impl<R: Real> ServiceModel<R> {
    pub fn new(mode: ServiceMode, mean_work: R) -> Result<Self> {
        if !(mean_work.is_finite() && mean_work > R::zero()) {
            return Err(SimError::config("mean task work must be positive"));
        }
        Ok(ServiceModel { mode, mean_work })
    }

    pub fn memoryless() -> Self {
        ServiceModel {
            mode: ServiceMode::Memoryless,
            mean_work: R::one(),
        }
    }
}

/// Service time of `work` on a worker with speed `rate`.
pub fn service_duration<R: Real, G: Rng + ?Sized>(
    rate: R,
    work: R,
    model: &ServiceModel<R>,
    rng: &mut G,
) -> Result<R> {
    if !(rate.is_finite() && rate > R::zero()) {
        return Err(SimError::fault(format!(
            "task started on worker with rate {rate}"
        )));
    }
    match model.mode {
        ServiceMode::Memoryless => Ok(R::sample_exp1(rng) * model.mean_work / rate),
        ServiceMode::SleepTask => {
            if !(work.is_finite() && work > R::zero()) {
                return Err(SimError::fault(format!(
                    "task work must be positive, got {work}"
                )));
            }
            Ok(work / rate)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task<R> {
    pub id: u64,
    pub job_id: u64,
    pub work: R,
    pub is_benchmark: bool,
    pub arrival_time: R,
    pub start_time: Option<R>,
    pub finish_time: Option<R>,
}

impl<R: Real> Task<R> {
    pub fn new(id: u64, job_id: u64, work: R, arrival_time: R) -> Self {
        Task {
            id,
            job_id,
            work,
            is_benchmark: false,
            arrival_time,
            start_time: None,
            finish_time: None,
        }
    }

    pub fn benchmark(id: u64, work: R, arrival_time: R) -> Self {
        Task {
            is_benchmark: true,
            ..Task::new(id, u64::MAX, work, arrival_time)
        }
    }

    pub fn service_time(&self) -> Option<R> {
        Some(self.finish_time? - self.start_time?)
    }

    pub fn response_time(&self) -> Option<R> {
        Some(self.finish_time? - self.arrival_time)
    }
}

/// A group of tasks that completes when its slowest task does.
#[derive(Clone, Debug, PartialEq)]
pub struct Job<R> {
    pub id: u64,
    pub arrival_time: R,
    pub tasks: Vec<Task<R>>,
}

impl<R: Real> Job<R> {
    pub fn response_time(&self) -> Option<R> {
        let mut last = R::neg_infinity();
        for t in &self.tasks {
            last = last.max(t.finish_time?);
        }
        if self.tasks.is_empty() {
            return None;
        }
        Some(last - self.arrival_time)
    }
}

#[derive(Clone, Debug)]
pub struct Worker<R> {
    pub id: usize,
    rate: R,
    real_queue: VecDeque<Task<R>>,
    benchmark_queue: VecDeque<Task<R>>,
    in_service: Option<Task<R>>,
    service_rng: ChaCha8Rng,
    /// Real tasks routed here.
    pub arrivals: u64,
    pub completed: u64,
    pub benchmarks_completed: u64,
    pub busy_time: R,
    pub benchmark_busy_time: R,
}

impl<R: Real> Worker<R> {
    pub fn new(id: usize, rate: R, service_rng: ChaCha8Rng) -> Result<Self> {
        if !(rate.is_finite() && rate >= R::zero()) {
            return Err(SimError::config(format!(
                "worker {id}: invalid rate {rate}"
            )));
        }
        Ok(Worker {
            id,
            rate,
            real_queue: VecDeque::new(),
            benchmark_queue: VecDeque::new(),
            in_service: None,
            service_rng,
            arrivals: 0,
            completed: 0,
            benchmarks_completed: 0,
            busy_time: R::zero(),
            benchmark_busy_time: R::zero(),
        })
    }

    pub fn rate(&self) -> R {
        self.rate
    }

    /// New speed; the task in service keeps the duration it started with.
    pub fn set_rate(&mut self, rate: R) -> Result<()> {
        if !(rate.is_finite() && rate >= R::zero()) {
            return Err(SimError::config(format!(
                "worker {}: invalid rate {rate}",
                self.id
            )));
        }
        self.rate = rate;
        Ok(())
    }

    /// Real tasks waiting, excluding the one in service.
    pub fn queue_length(&self) -> usize {
        self.real_queue.len()
    }

    /// Real tasks present, including one in service. This is the number
    /// the dispatch policies compare and the metrics record.
    pub fn load(&self) -> usize {
        self.real_queue.len()
            + usize::from(self.in_service.as_ref().is_some_and(|t| !t.is_benchmark))
    }

    pub fn benchmark_backlog(&self) -> usize {
        self.benchmark_queue.len()
    }

    pub fn in_service(&self) -> Option<&Task<R>> {
        self.in_service.as_ref()
    }

    pub fn is_idle(&self) -> bool {
        self.in_service.is_none()
    }

    /// Queues the task by priority class. Returns `true` when the worker is idle
    /// and the caller should call [`Worker::start_next`].
    pub fn enqueue(&mut self, task: Task<R>) -> bool {
        if task.is_benchmark {
            self.benchmark_queue.push_back(task);
        } else {
            self.arrivals += 1;
            self.real_queue.push_back(task);
        }
        self.is_idle()
    }

    /// Starts the highest-priority queued task and returns its service time.
    /// `None` when nothing is queued, the worker is busy, or its rate is zero.
    pub fn start_next(&mut self, now: R, model: &ServiceModel<R>) -> Result<Option<R>> {
        if self.in_service.is_some() || self.rate <= R::zero() {
            return Ok(None);
        }
        let mut task = match self.real_queue.pop_front() {
            Some(t) => t,
            None => match self.benchmark_queue.pop_front() {
                Some(t) => t,
                None => return Ok(None),
            },
        };
        let duration = service_duration(self.rate, task.work, model, &mut self.service_rng)?;
        task.start_time = Some(now);
        self.in_service = Some(task);
        Ok(Some(duration))
    }

    /// Finishes the task in service. A completion with nothing in service means
    /// the event trace is corrupt.
    pub fn complete_current(&mut self, now: R) -> Result<Task<R>> {
        let mut task = self.in_service.take().ok_or_else(|| {
            SimError::fault(format!(
                "completion at worker {} with no task in service",
                self.id
            ))
        })?;
        task.finish_time = Some(now);
        let busy = now - task.start_time.unwrap_or(now);
        self.busy_time = self.busy_time + busy;
        if task.is_benchmark {
            self.benchmarks_completed += 1;
            self.benchmark_busy_time = self.benchmark_busy_time + busy;
        } else {
            self.completed += 1;
        }
        Ok(task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn worker(rate: f64) -> Worker<f64> {
        Worker::new(0, rate, ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn sleep_model() -> ServiceModel<f64> {
        ServiceModel::new(ServiceMode::SleepTask, 1.0).unwrap()
    }

    #[test]
    fn sleep_task_durations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            service_duration(4.0, 1.0, &sleep_model(), &mut rng).unwrap(),
            0.25
        );
        let m = ServiceModel::new(ServiceMode::SleepTask, 0.1f64).unwrap();
        let d = service_duration(0.2, 0.1, &m, &mut rng).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn memoryless_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ServiceModel::<f64>::memoryless();
        let draws = 100_000;
        let total: f64 = (0..draws)
            .map(|_| service_duration(2.0, 123.0, &m, &mut rng).unwrap())
            .sum();
        let mean = total / draws as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn zero_rate_worker_never_starts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(service_duration(0.0, 1.0, &sleep_model(), &mut rng).is_err());
        let mut w = worker(0.0);
        assert!(w.enqueue(Task::new(0, 0, 1.0, 0.0)));
        assert_eq!(w.start_next(0.0, &sleep_model()).unwrap(), None);
        assert_eq!(w.queue_length(), 1);
    }

    #[test]
    fn idle_worker_starts_immediately() {
        let mut w = worker(2.0);
        assert!(w.enqueue(Task::new(0, 0, 1.0, 0.0)));
        assert_eq!(w.start_next(0.0, &sleep_model()).unwrap(), Some(0.5));
        assert_eq!(w.queue_length(), 0);
        assert_eq!(w.load(), 1);
    }

    #[test]
    fn busy_worker_queues() {
        let mut w = worker(1.0);
        w.enqueue(Task::new(0, 0, 1.0, 0.0));
        w.start_next(0.0, &sleep_model()).unwrap();
        assert!(!w.enqueue(Task::new(1, 1, 1.0, 0.1)));
        assert_eq!(w.queue_length(), 1);
        assert_eq!(w.start_next(0.1, &sleep_model()).unwrap(), None);
    }

    #[test]
    fn real_task_overtakes_queued_benchmark() {
        let mut w = worker(1.0);
        w.enqueue(Task::benchmark(10, 1.0, 0.0));
        w.enqueue(Task::new(11, 3, 1.0, 0.0));
        w.start_next(0.0, &sleep_model()).unwrap();
        assert_eq!(w.in_service().unwrap().id, 11);
        assert_eq!(w.benchmark_backlog(), 1);
    }

    #[test]
    fn completion_selects_by_priority() {
        let mut w = worker(1.0);
        w.enqueue(Task::new(0, 0, 1.0, 0.0));
        w.start_next(0.0, &sleep_model()).unwrap();
        w.enqueue(Task::benchmark(1, 1.0, 0.2));
        w.enqueue(Task::new(2, 1, 1.0, 0.5));
        let done = w.complete_current(1.0).unwrap();
        assert_eq!(done.finish_time, Some(1.0));
        assert_eq!(done.service_time(), Some(1.0));
        w.start_next(1.0, &sleep_model()).unwrap();
        assert_eq!(w.in_service().unwrap().id, 2);
        w.complete_current(2.0).unwrap();
        w.start_next(2.0, &sleep_model()).unwrap();
        let bench = w.complete_current(3.0).unwrap();
        assert!(bench.is_benchmark);
        assert_eq!(bench.service_time(), Some(1.0));
        assert_eq!(w.start_next(3.0, &sleep_model()).unwrap(), None);
        assert!(w.is_idle());
        assert_eq!(w.completed, 2);
        assert_eq!(w.benchmarks_completed, 1);
    }

    #[test]
    fn benchmark_in_service_is_not_preempted() {
        let mut w = worker(1.0);
        w.enqueue(Task::benchmark(0, 2.0, 0.0));
        w.start_next(0.0, &sleep_model()).unwrap();
        assert_eq!(w.load(), 0);
        assert!(!w.enqueue(Task::new(1, 0, 1.0, 0.5)));
        assert_eq!(w.in_service().unwrap().id, 0);
        assert_eq!(w.load(), 1);
    }

    #[test]
    fn completion_without_service_is_fault() {
        let mut w = worker(1.0);
        assert!(matches!(w.complete_current(1.0), Err(SimError::Fault(_))));
    }

    #[test]
    fn real_tasks_finish_in_arrival_order() {
        let mut w = worker(3.0);
        let m = ServiceModel::<f64>::memoryless();
        let mut now = 0.0;
        for id in 0..50 {
            w.enqueue(Task::new(id, id, 1.0, id as f64 * 0.01));
        }
        let mut finished = Vec::new();
        while let Some(d) = w.start_next(now, &m).unwrap() {
            now += d;
            finished.push(w.complete_current(now).unwrap().id);
        }
        assert_eq!(finished, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn job_response_is_slowest_task() {
        let mut tasks: Vec<Task<f64>> = (0..3).map(|i| Task::new(i, 7, 1.0, 1.0)).collect();
        let job = Job {
            id: 7,
            arrival_time: 1.0,
            tasks: tasks.clone(),
        };
        assert_eq!(job.response_time(), None);
        for (t, f) in tasks.iter_mut().zip([2.0, 5.0, 3.0]) {
            t.start_time = Some(1.0);
            t.finish_time = Some(f);
        }
        let job = Job {
            id: 7,
            arrival_time: 1.0,
            tasks,
        };
        assert_eq!(job.response_time(), Some(4.0));
    }
}
