//! Metrics, analytic oracles and coupled-run recovery measurement.

mod metrics;
mod oracle;
mod recovery;

pub use metrics::{
    nearest_rank, GroupRate, MetricsCollector, MetricsReport, Percentiles, QueueHistogram, RunMeta,
    SamplePoint, WorkerSummary, PERCENTILE_RANKS,
};
pub use oracle::{
    fixed_point_rates, l0_distance, l1_distance, mm1_max_queue_estimate, mm1_tail, ppot_tail,
    tail_recurrence_check, LevelCheck, RecurrenceReport, TailProfile, Verdict,
};
pub use recovery::{coupled_recovery_run, RecoveryConfig, RecoveryResult, RecoverySample};
