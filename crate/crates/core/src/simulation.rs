//! One simulated run: event loop, dispatch, learning, shocks and metrics.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::analytics::{MetricsCollector, MetricsReport, RunMeta};
use crate::bandit::{reward, Exp3State, Exp4State};
use crate::cluster::{Job, ServiceMode, ServiceModel, Task, Worker};
use crate::engine::{
    DiscreteChain, DiscreteChainState, DiscreteEvent, EventKind, EventQueue, RandomStreams,
    SimTime, StreamId,
};
use crate::error::{Result, SimError};
use crate::learner::{BenchmarkDispatcher, Learner, LearnerConstants};
use crate::policy::{
    draw_candidates, pss_weights, resolve, PolicyConfig, PolicyKind, SpeedSource, WeightedSampler,
};
use crate::scalar::Real;
use crate::workload::{apply_shock, ShockMode, ShockSchedule, SpeedSpec, WorkloadSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Event-driven continuous time.
    #[default]
    Continuous,
    /// Uniformized round-by-round chain.
    Discrete,
}

/// Everything needed for one run of one policy with one seed.
#[derive(Clone, Debug)]
pub struct SimConfig<R> {
    pub n: usize,
    pub speeds: SpeedSpec,
    pub workload: WorkloadSpec<R>,
    pub service_mode: ServiceMode,
    pub policy: PolicyConfig<R>,
    /// Name used in reports; defaults to the policy name.
    pub label: String,
    /// Used when the policy routes by learned estimates.
    pub learner: Option<LearnerConstants<R>>,
    /// Inject benchmark tasks while learning.
    pub benchmarks: bool,
    pub shocks: ShockSchedule<R>,
    /// Longest task length for bandit rewards; defaults to `10 * mean_work`.
    pub longest_task: Option<R>,
    pub max_events: Option<u64>,
    pub max_time: Option<R>,
    pub sample_interval: R,
    /// Share of the budget excluded from stationary statistics.
    pub warmup_fraction: R,
    pub seed: u64,
    pub mode: RunMode,
}

impl<R: Real> SimConfig<R> {
    pub fn new(
        n: usize,
        speeds: SpeedSpec,
        workload: WorkloadSpec<R>,
        policy: PolicyConfig<R>,
    ) -> Self {
        SimConfig {
            n,
            speeds,
            workload,
            service_mode: ServiceMode::Memoryless,
            label: policy.kind.name().to_string(),
            policy,
            learner: None,
            benchmarks: true,
            shocks: ShockSchedule::disabled(),
            longest_task: None,
            max_events: Some(100_000),
            max_time: None,
            sample_interval: R::one(),
            warmup_fraction: R::lit(0.2),
            seed: 0,
            mode: RunMode::Continuous,
        }
    }

    pub fn learns(&self) -> bool {
        self.policy.speed_source == SpeedSource::LearnedEstimates
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SimError::config("cluster.n must be at least 1"));
        }
        self.policy.validate()?;
        self.workload.validate()?;
        self.shocks.validate()?;
        if !(self.sample_interval.is_finite() && self.sample_interval > R::zero()) {
            return Err(SimError::config("metrics.sample_interval must be positive"));
        }
        if !(self.warmup_fraction >= R::zero() && self.warmup_fraction < R::one()) {
            return Err(SimError::config(
                "metrics.warmup_fraction must lie in [0, 1)",
            ));
        }
        if self.max_events.is_none() && self.max_time.is_none() {
            return Err(SimError::config("budget needs max_events or max_time"));
        }
        if let Some(t) = self.max_time {
            if !(t >= R::zero()) {
                return Err(SimError::config("budget.max_time must be non-negative"));
            }
        }
        if let Some(l) = self.longest_task {
            if !(l > R::zero()) {
                return Err(SimError::config("bandit.longest_task must be positive"));
            }
        }
        if self.learns() {
            match &self.learner {
                Some(c) => c.validate()?,
                None => return Err(SimError::config("learned speeds need learner.mu_bar")),
            }
        }
        if self.mode == RunMode::Discrete {
            if self.policy.kind.is_stateful() {
                return Err(SimError::config(format!(
                    "policy `{}` is not supported in discrete mode",
                    self.policy.kind
                )));
            }
            if self.learns() || self.shocks.enabled {
                return Err(SimError::config(
                    "discrete mode supports neither learning nor shocks",
                ));
            }
            if self.workload.tasks_per_job != 1 || self.service_mode != ServiceMode::Memoryless {
                return Err(SimError::config(
                    "discrete mode needs single-task jobs and memoryless service",
                ));
            }
        }
        Ok(())
    }

    /// Event count or time at which warm-up ends.
    fn warmup_events(&self) -> Option<u64> {
        self.max_events
            .map(|m| (self.warmup_fraction.as_f64() * m as f64).ceil() as u64)
    }

    fn warmup_time(&self) -> Option<R> {
        match (self.max_events, self.max_time) {
            (None, Some(t)) => Some(self.warmup_fraction * t),
            _ => None,
        }
    }

    fn meta(&self, capacity: R) -> RunMeta<R> {
        RunMeta {
            policy: self.label.clone(),
            seed: self.seed,
            alpha: self.workload.load_ratio(capacity),
            n: self.n,
        }
    }
}

/// Outcome of one [`Simulation::step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Processed(EventKind),
    /// Budget exhausted or no events left.
    Finished,
}

enum Scheduler<R> {
    Stateless,
    Exp3(Exp3State<R>),
    Exp4(Exp4State<R>),
}

struct JobState<R> {
    arrival: R,
    remaining: usize,
    counted: bool,
}

/// Continuous-time simulation of one policy.
pub struct Simulation<R: Real> {
    config: SimConfig<R>,
    queue: EventQueue<R>,
    streams: RandomStreams,
    workers: Vec<Worker<R>>,
    loads: Vec<usize>,
    speeds: Vec<R>,
    lambda: R,
    service: ServiceModel<R>,
    routing_rates: Vec<R>,
    routing: WeightedSampler<R>,
    scheduler: Scheduler<R>,
    learner: Option<Learner<R>>,
    benchmark_armed: bool,
    pending_job: Option<Job<R>>,
    pending_benchmark: VecDeque<usize>,
    jobs: HashMap<u64, JobState<R>>,
    next_job_id: u64,
    next_task_id: u64,
    metrics: MetricsCollector<R>,
    events: u64,
    slowest: R,
    longest_task: R,
    uniform_advice: Vec<R>,
    end_time: Option<R>,
}

impl<R: Real> Simulation<R> {
    pub fn new(config: SimConfig<R>) -> Result<Self> {
        config.validate()?;
        if config.mode != RunMode::Continuous {
            return Err(SimError::config(
                "Simulation runs continuous mode; use run_discrete",
            ));
        }
        let mut streams = RandomStreams::new(config.seed);
        let speeds: Vec<R> = config
            .speeds
            .initial(config.n, streams.get(StreamId::Speeds))?;
        let n = speeds.len();
        let capacity: R = speeds.iter().copied().sum();
        let lambda = config.workload.arrival_rate(capacity);
        let workers = speeds
            .iter()
            .enumerate()
            .map(|(i, &s)| Worker::new(i, s, streams.worker_stream(i)))
            .collect::<Result<Vec<_>>>()?;
        let service = ServiceModel::new(config.service_mode, config.workload.mean_work)?;

        let learner = if config.learns() {
            let mut constants = config
                .learner
                .clone()
                .ok_or_else(|| SimError::config("learned speeds need learner.mu_bar"))?;
            constants.work_per_arrival = config.workload.work_per_job();
            constants.mean_work = config.workload.mean_work;
            Some(Learner::new(n, constants)?)
        } else {
            None
        };
        let routing_rates = match &learner {
            Some(l) => l.mu_hat().to_vec(),
            None => speeds.clone(),
        };
        let scheduler = match config.policy.kind {
            PolicyKind::Exp3 => Scheduler::Exp3(Exp3State::new(n, gamma(&config.policy)?)?),
            PolicyKind::Exp4 => Scheduler::Exp4(Exp4State::new(gamma(&config.policy)?)?),
            _ => Scheduler::Stateless,
        };
        let longest_task = config
            .longest_task
            .unwrap_or(config.workload.mean_work * R::lit(10.0));
        let mut sim = Simulation {
            queue: EventQueue::new(),
            loads: vec![0; n],
            routing: WeightedSampler::new(&routing_rates),
            routing_rates,
            scheduler,
            learner,
            benchmark_armed: false,
            pending_job: None,
            pending_benchmark: VecDeque::new(),
            jobs: HashMap::new(),
            next_job_id: 0,
            next_task_id: 0,
            metrics: MetricsCollector::new(&speeds),
            events: 0,
            slowest: slowest_positive(&speeds),
            longest_task,
            uniform_advice: vec![R::one() / R::count(n); n],
            end_time: None,
            workers,
            speeds,
            lambda,
            service,
            streams,
            config,
        };
        sim.bootstrap()?;
        Ok(sim)
    }

    fn bootstrap(&mut self) -> Result<()> {
        if self.config.warmup_fraction <= R::zero() {
            self.metrics.begin_stationary(R::zero());
        }
        self.schedule_next_job(R::zero())?;
        self.arm_benchmark()?;
        if self.config.shocks.enabled {
            self.queue
                .schedule_in(self.config.shocks.period, EventKind::SpeedShock)?;
        }
        self.queue
            .schedule_in(self.config.sample_interval, EventKind::MetricsSample)?;
        Ok(())
    }

    pub fn config(&self) -> &SimConfig<R> {
        &self.config
    }

    pub fn now(&self) -> R {
        self.queue.now().value()
    }

    pub fn workers(&self) -> &[Worker<R>] {
        &self.workers
    }

    /// Real tasks at each worker, counting the one in service.
    pub fn loads(&self) -> &[usize] {
        &self.loads
    }

    /// Current true speeds.
    pub fn speeds(&self) -> &[R] {
        &self.speeds
    }

    /// Rates the policy routes by.
    pub fn routing_rates(&self) -> &[R] {
        &self.routing_rates
    }

    pub fn arrival_rate(&self) -> R {
        self.lambda
    }

    pub fn learner(&self) -> Option<&Learner<R>> {
        self.learner.as_ref()
    }

    /// Events processed so far, excluding metric samples.
    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn in_warmup(&self) -> bool {
        !self.metrics.is_stationary()
    }

    fn budget_exhausted(&self) -> bool {
        self.config.max_events.is_some_and(|m| self.events >= m)
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.end_time.is_some() {
            return Ok(StepOutcome::Finished);
        }
        if self.budget_exhausted() {
            self.end_time = Some(self.now());
            return Ok(StepOutcome::Finished);
        }
        if let (Some(limit), Some(next)) = (self.config.max_time, self.queue.peek_time()) {
            if next.value() > limit {
                self.end_time = Some(limit.max(self.now()));
                return Ok(StepOutcome::Finished);
            }
        }
        let Some(event) = self.queue.next_event() else {
            self.end_time = Some(self.now());
            return Ok(StepOutcome::Finished);
        };
        match event.kind {
            EventKind::JobArrival => self.on_job_arrival()?,
            EventKind::TaskCompletion(i) => self.on_completion(i)?,
            EventKind::BenchmarkArrival => self.on_benchmark()?,
            EventKind::SpeedShock => self.on_shock()?,
            EventKind::MetricsSample => self.on_sample()?,
        }
        if event.kind != EventKind::MetricsSample {
            self.events += 1;
        }
        if self.in_warmup() && self.warmup_reached() {
            self.metrics.begin_stationary(self.now());
        }
        Ok(StepOutcome::Processed(event.kind))
    }

    fn warmup_reached(&self) -> bool {
        if let Some(e) = self.config.warmup_events() {
            return self.events >= e;
        }
        self.config.warmup_time().is_some_and(|t| self.now() >= t)
    }

    /// Runs until the budget is spent and returns the report.
    pub fn run(mut self) -> Result<MetricsReport<R>> {
        while self.step()? != StepOutcome::Finished {}
        self.finish()
    }

    pub fn finish(self) -> Result<MetricsReport<R>> {
        let end_time = self.end_time.unwrap_or_else(|| self.now());
        let busy = self.workers.iter().map(|w| w.busy_time).sum();
        let benchmark_busy = self.workers.iter().map(|w| w.benchmark_busy_time).sum();
        let learn_error = self.learner.as_ref().map(|l| l.error_l1(&self.speeds));
        let capacity: R = self.speeds.iter().copied().sum();
        let meta = self.config.meta(capacity);
        self.metrics.finish(
            meta,
            end_time,
            self.events,
            busy,
            benchmark_busy,
            learn_error,
        )
    }

    fn schedule_next_job(&mut self, now: R) -> Result<()> {
        let job = self.config.workload.next_job(
            self.streams.get(StreamId::Arrivals),
            now,
            self.lambda,
            self.next_job_id,
            self.next_task_id,
        )?;
        self.next_job_id += 1;
        self.next_task_id += job.tasks.len() as u64;
        self.queue
            .schedule(SimTime::new(job.arrival_time)?, EventKind::JobArrival)?;
        self.pending_job = Some(job);
        Ok(())
    }

    fn on_job_arrival(&mut self) -> Result<()> {
        let now = self.now();
        let job = self
            .pending_job
            .take()
            .ok_or_else(|| SimError::fault("job arrival without a pending job"))?;
        if let Some(l) = self.learner.as_mut() {
            l.on_arrival(now)?;
        }
        self.jobs.insert(
            job.id,
            JobState {
                arrival: now,
                remaining: job.tasks.len(),
                counted: self.metrics.is_stationary(),
            },
        );
        for task in job.tasks {
            let target = self.choose_worker(&task)?;
            self.metrics.record_arrival(target);
            self.enqueue(target, task)?;
        }
        self.schedule_next_job(now)?;
        if !self.benchmark_armed {
            self.arm_benchmark()?;
        }
        Ok(())
    }

    fn choose_worker(&mut self, task: &Task<R>) -> Result<usize> {
        let rng = self.streams.get(StreamId::Policy);
        match &mut self.scheduler {
            Scheduler::Stateless => {
                let cands = draw_candidates(&self.config.policy, &self.routing, rng)?;
                Ok(resolve(
                    self.config.policy.kind,
                    cands,
                    &self.loads,
                    &self.routing_rates,
                ))
            }
            Scheduler::Exp3(state) => {
                let (arm, _) = state.choose(rng);
                let x = reward(task.work, self.speeds[arm], self.slowest, self.longest_task)?;
                state.update(arm, x.value)?;
                Ok(arm)
            }
            Scheduler::Exp4(state) => {
                let pss = if self.routing.total() > R::zero() {
                    pss_weights(&self.routing_rates)?.into_vec()
                } else {
                    self.uniform_advice.clone()
                };
                let advice = [&pss[..], &self.uniform_advice[..]];
                let (speeds, slowest, longest) = (&self.speeds, self.slowest, self.longest_task);
                let (arm, _) = state.step(&advice, rng, |arm| {
                    Ok(reward(task.work, speeds[arm], slowest, longest)?.value)
                })?;
                Ok(arm)
            }
        }
    }

    fn enqueue(&mut self, worker: usize, task: Task<R>) -> Result<()> {
        if self.workers[worker].enqueue(task) {
            self.try_start(worker)?;
        }
        self.loads[worker] = self.workers[worker].load();
        Ok(())
    }

    fn try_start(&mut self, worker: usize) -> Result<()> {
        let now = self.now();
        if let Some(duration) = self.workers[worker].start_next(now, &self.service)? {
            self.queue
                .schedule_in(duration, EventKind::TaskCompletion(worker))?;
        }
        Ok(())
    }

    fn on_completion(&mut self, worker: usize) -> Result<()> {
        let now = self.now();
        let task = self.workers[worker].complete_current(now)?;
        let start = task
            .start_time
            .ok_or_else(|| SimError::fault("finished task never started"))?;
        if let Some(l) = self.learner.as_mut() {
            let estimate = l.on_completion(worker, start, now)?;
            if self.routing_rates[worker] != estimate {
                self.routing_rates[worker] = estimate;
                self.routing.set(worker, estimate);
            }
        }
        if !task.is_benchmark {
            let state = self
                .jobs
                .get_mut(&task.job_id)
                .ok_or_else(|| SimError::fault(format!("task of unknown job {}", task.job_id)))?;
            state.remaining -= 1;
            let counted = state.counted;
            let arrival = state.arrival;
            if state.remaining == 0 {
                self.jobs.remove(&task.job_id);
                if counted {
                    self.metrics.record_job(now - arrival);
                }
            }
            self.metrics.record_task(
                worker,
                start - task.arrival_time,
                now - task.arrival_time,
                counted,
            );
        }
        self.try_start(worker)?;
        self.loads[worker] = self.workers[worker].load();
        Ok(())
    }

    fn arm_benchmark(&mut self) -> Result<()> {
        let Some(learner) = self.learner.as_ref() else {
            return Ok(());
        };
        if !self.config.benchmarks {
            return Ok(());
        }
        let dispatcher = BenchmarkDispatcher {
            c0: learner.constants().c0,
        };
        let rate = learner.benchmark_rate();
        match dispatcher.next_benchmark(
            rate,
            self.workers.len(),
            self.streams.get(StreamId::Benchmark),
        )? {
            Some((gap, target)) => {
                self.queue.schedule_in(gap, EventKind::BenchmarkArrival)?;
                self.pending_benchmark.push_back(target);
                self.benchmark_armed = true;
            }
            None => self.benchmark_armed = false,
        }
        Ok(())
    }

    fn on_benchmark(&mut self) -> Result<()> {
        let target = self
            .pending_benchmark
            .pop_front()
            .ok_or_else(|| SimError::fault("benchmark arrival without a target"))?;
        let work = self
            .config
            .workload
            .draw_work(self.streams.get(StreamId::Benchmark));
        let task = Task::benchmark(self.next_task_id, work, self.now());
        self.next_task_id += 1;
        self.enqueue(target, task)?;
        self.arm_benchmark()
    }

    fn on_shock(&mut self) -> Result<()> {
        let next = apply_shock(
            &self.speeds,
            &self.config.speeds,
            &self.config.shocks,
            self.streams.get(StreamId::Shocks),
        )?;
        for (w, &s) in self.workers.iter_mut().zip(&next) {
            w.set_rate(s)?;
        }
        self.speeds = next;
        if self.config.shocks.mode == ShockMode::Resample {
            let capacity: R = self.speeds.iter().copied().sum();
            self.lambda = self.config.workload.arrival_rate(capacity);
            self.slowest = slowest_positive(&self.speeds);
        }
        if self.learner.is_none() {
            self.routing_rates.clone_from(&self.speeds);
            self.routing = WeightedSampler::new(&self.routing_rates);
        }
        for i in 0..self.workers.len() {
            if self.workers[i].is_idle() {
                self.try_start(i)?;
                self.loads[i] = self.workers[i].load();
            }
        }
        self.queue
            .schedule_in(self.config.shocks.period, EventKind::SpeedShock)?;
        Ok(())
    }

    fn on_sample(&mut self) -> Result<()> {
        let (lambda_hat, error) = match &self.learner {
            Some(l) => (Some(l.lambda_hat()), Some(l.error_l1(&self.speeds))),
            None => (None, None),
        };
        self.metrics
            .record_sample(self.now(), &self.loads, lambda_hat, error);
        self.queue
            .schedule_in(self.config.sample_interval, EventKind::MetricsSample)?;
        Ok(())
    }
}

fn gamma<R: Real>(policy: &PolicyConfig<R>) -> Result<R> {
    policy
        .gamma
        .ok_or_else(|| SimError::config(format!("policy `{}` requires gamma", policy.kind)))
}

fn slowest_positive<R: Real>(speeds: &[R]) -> R {
    speeds
        .iter()
        .copied()
        .filter(|&s| s > R::zero())
        .fold(R::infinity(), R::min)
}

/// Runs the configured mode and returns the report.
pub fn run_simulation<R: Real>(config: SimConfig<R>) -> Result<MetricsReport<R>> {
    match config.mode {
        RunMode::Continuous => Simulation::new(config)?.run(),
        RunMode::Discrete => run_discrete(config),
    }
}

/// Runs the uniformized chain. Each round counts as one event and lasts
/// `1 / (lambda + sum mu)` time units.
pub fn run_discrete<R: Real>(config: SimConfig<R>) -> Result<MetricsReport<R>> {
    config.validate()?;
    if config.mode != RunMode::Discrete {
        return Err(SimError::config("run_discrete needs mode = discrete"));
    }
    let mut streams = RandomStreams::new(config.seed);
    let speeds: Vec<R> = config
        .speeds
        .initial(config.n, streams.get(StreamId::Speeds))?;
    let n = speeds.len();
    let capacity: R = speeds.iter().copied().sum();
    let lambda = config.workload.arrival_rate(capacity);
    let task_rates: Vec<R> = speeds
        .iter()
        .map(|&s| s / config.workload.mean_work)
        .collect();
    let mut chain = DiscreteChain::new(lambda, task_rates, config.policy.clone())?;
    let round_length = R::one() / chain.total_rate();
    let mut state = DiscreteChainState::empty(n);
    let mut metrics = MetricsCollector::new(&speeds);
    // (arrival time, time it reached the head of its queue, counted)
    let mut fifo: Vec<VecDeque<(R, R, bool)>> = vec![VecDeque::new(); n];
    let mut loads = vec![0usize; n];
    let warmup_events = config.warmup_events();
    let warmup_time = config.warmup_time();
    if config.warmup_fraction <= R::zero() {
        metrics.begin_stationary(R::zero());
    }
    let mut next_sample = config.sample_interval;
    let mut rounds = 0u64;
    let mut now = R::zero();
    let rng = streams.get(StreamId::Policy);
    loop {
        if config.max_events.is_some_and(|m| rounds >= m) {
            break;
        }
        let next_time = R::lit((rounds + 1) as f64) * round_length;
        while next_sample <= next_time && config.max_time.is_none_or(|t| next_sample <= t) {
            metrics.record_sample(next_sample, &loads, None, None);
            next_sample = next_sample + config.sample_interval;
        }
        if config.max_time.is_some_and(|t| next_time > t) {
            now = config.max_time.unwrap_or(now);
            break;
        }
        now = next_time;
        let event = chain.step(&mut state, rng)?;
        match event {
            DiscreteEvent::Arrival(i) => {
                let counted = metrics.is_stationary();
                metrics.record_arrival(i);
                fifo[i].push_back((now, now, counted));
            }
            DiscreteEvent::Departure(i) => {
                let (arrival, head, counted) = fifo[i]
                    .pop_front()
                    .ok_or_else(|| SimError::fault("departure from an empty queue"))?;
                metrics.record_task(i, head - arrival, now - arrival, counted);
                if counted {
                    metrics.record_job(now - arrival);
                }
                if let Some(front) = fifo[i].front_mut() {
                    front.1 = now;
                }
            }
            DiscreteEvent::Idle(_) => {}
        }
        if let DiscreteEvent::Arrival(i) | DiscreteEvent::Departure(i) = event {
            loads[i] = state.queues[i] as usize;
        }
        rounds += 1;
        if !metrics.is_stationary() {
            let reached = match (warmup_events, warmup_time) {
                (Some(e), _) => rounds >= e,
                (None, Some(t)) => now >= t,
                _ => false,
            };
            if reached {
                metrics.begin_stationary(now);
            }
        }
    }
    metrics.finish(
        config.meta(capacity),
        now,
        rounds,
        R::zero(),
        R::zero(),
        None,
    )
}
