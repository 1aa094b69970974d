//! Discrete-event simulation of task scheduling on heterogeneous clusters:
//! proportional sampling, power-of-two choices, online speed learning, bandit
//! baselines and the queueing oracles used to check them.
//!
//! The core is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! it to `f64`.

// `!(x > 0)` doubles as a NaN guard throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod bandit;
pub mod cluster;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod policy;
pub mod presets;
pub mod scalar;
pub mod simulation;
pub mod validation;
pub mod workload;

pub use error::{Result, SimError};
pub use scalar::Real;

pub type SimConfig = simulation::SimConfig<f64>;
pub type Simulation = simulation::Simulation<f64>;
pub type MetricsReport = analytics::MetricsReport<f64>;
pub type WorkloadSpec = workload::WorkloadSpec<f64>;
pub type ShockSchedule = workload::ShockSchedule<f64>;
pub type PolicyConfig = policy::PolicyConfig<f64>;
pub type LearnerConstants = learner::LearnerConstants<f64>;
pub type Learner = learner::Learner<f64>;
pub type RecoveryConfig = analytics::RecoveryConfig<f64>;
pub type RecoveryResult = analytics::RecoveryResult<f64>;
pub type Exp3State = bandit::Exp3State<f64>;
pub type Exp4State = bandit::Exp4State<f64>;
