//! Experiment configuration files.
//!
//! A config is one TOML document. Every table rejects unknown keys, and
//! [`ExperimentConfig::validate`] checks cross-field rules before anything runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::ServiceMode;
use crate::error::{Result, SimError};
use crate::learner::{LearnerConstants, WindowMode};
use crate::policy::{PolicyConfig, PolicyKind, SpeedSource};
use crate::scalar::Real;
use crate::simulation::{RunMode, SimConfig};
use crate::workload::{ShockMode, ShockSchedule, SpeedSpec, WorkloadSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub cluster: ClusterSection,
    pub workload: WorkloadSection,
    pub policies: Vec<PolicyEntry>,
    #[serde(default)]
    pub learner: Option<LearnerSection>,
    #[serde(default)]
    pub shocks: Option<ShockSection>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub bandit: BanditSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub validate: Option<ValidateSection>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub n: usize,
    #[serde(default)]
    pub speeds: SpeedSpec,
    #[serde(default)]
    pub service: ServiceMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "one_task")]
    pub tasks_per_job: usize,
    #[serde(default = "unit")]
    pub mean_work: f64,
}

fn one_task() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// Which rates a policy routes by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedsFrom {
    #[default]
    Oracle,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub kind: PolicyKind,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub speeds: SpeedsFrom,
    /// Inject benchmark tasks while learning.
    #[serde(default = "yes")]
    pub benchmarks: bool,
    #[serde(default)]
    pub explore_prob: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn yes() -> bool {
    true
}

impl PolicyEntry {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| match self.speeds {
            SpeedsFrom::Oracle => self.kind.name().to_string(),
            SpeedsFrom::Learned => format!("{}+learning", self.kind.name()),
        })
    }

    pub fn to_policy<R: Real>(&self) -> PolicyConfig<R> {
        PolicyConfig {
            kind: self.kind,
            explore_prob: self.explore_prob.map(R::lit),
            gamma: self.gamma.map(R::lit),
            speed_source: match self.speeds {
                SpeedsFrom::Oracle => SpeedSource::TrueRates,
                SpeedsFrom::Learned => SpeedSource::LearnedEstimates,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub mu_bar: f64,
    #[serde(default)]
    pub window: WindowMode,
    #[serde(default)]
    pub c1: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub arrival_window: Option<usize>,
    #[serde(default)]
    pub initial_lambda: Option<f64>,
    #[serde(default)]
    pub initial_speed: Option<f64>,
}

impl LearnerSection {
    pub fn to_constants<R: Real>(&self) -> LearnerConstants<R> {
        let mut k = LearnerConstants::with_mu_bar(R::lit(self.mu_bar));
        k.window_mode = self.window;
        if let Some(v) = self.c1 {
            k.c1 = R::lit(v);
        }
        if let Some(v) = self.c {
            k.c = R::lit(v);
        }
        if let Some(v) = self.c0 {
            k.c0 = R::lit(v);
        }
        if let Some(v) = self.arrival_window {
            k.arrival_window = v;
        }
        if let Some(v) = self.initial_lambda {
            k.initial_lambda = R::lit(v);
        }
        k.initial_speed = self.initial_speed.map(R::lit);
        k
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSection {
    pub period: f64,
    #[serde(default)]
    pub mode: ShockMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Events per run, metric samples excluded.
    #[serde(default)]
    pub max_events: Option<u64>,
    #[serde(default)]
    pub max_time: Option<f64>,
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection {
            max_events: Some(100_000),
            max_time: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "unit")]
    pub sample_interval: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
}

fn default_warmup() -> f64 {
    0.2
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            sample_interval: 1.0,
            warmup_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSection {
    /// Longest task length in the reward; defaults to `10 * mean_work`.
    #[serde(default)]
    pub longest_task: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub checks: Vec<String>,
}

/// Parameters a sweep may vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    N,
    WindowC,
    Gamma,
    Eta,
    ShockPeriod,
}

impl SweepParam {
    pub const ALL: [SweepParam; 6] = [
        SweepParam::Alpha,
        SweepParam::N,
        SweepParam::WindowC,
        SweepParam::Gamma,
        SweepParam::Eta,
        SweepParam::ShockPeriod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::N => "n",
            SweepParam::WindowC => "window_c",
            SweepParam::Gamma => "gamma",
            SweepParam::Eta => "eta",
            SweepParam::ShockPeriod => "shock_period",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
                SimError::config(format!(
                    "unknown sweep parameter `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// One simulation of one policy and seed, with its position in the config.
#[derive(Clone, Debug)]
pub struct RunSpec<R> {
    pub policy_index: usize,
    pub seed: u64,
    pub sim: SimConfig<R>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| SimError::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| SimError::fault(format!("config echo failed: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(SimError::config(
                "policies: at least one policy is required",
            ));
        }
        if self.seeds.is_empty() {
            return Err(SimError::config("seeds: at least one seed is required"));
        }
        let mut labels: Vec<String> = self.policies.iter().map(PolicyEntry::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(SimError::config(format!(
                "policies: duplicate label `{}`; set policies.label",
                w[0]
            )));
        }
        let learned = self
            .policies
            .iter()
            .any(|p| p.speeds == SpeedsFrom::Learned);
        if learned && self.learner.is_none() {
            return Err(SimError::config(
                "learner.mu_bar: learned speeds need a [learner] table with mu_bar",
            ));
        }
        if let Some(sweep) = &self.sweep {
            SweepParam::parse(&sweep.parameter)?;
            if sweep.values.is_empty() {
                return Err(SimError::config("sweep.values must not be empty"));
            }
        }
        for spec in self.expand::<f64>()? {
            spec.sim.validate()?;
        }
        Ok(())
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.output.dir.as_deref()
    }

    fn workload<R: Real>(&self) -> WorkloadSpec<R> {
        WorkloadSpec {
            alpha: self.workload.alpha.map(R::lit),
            lambda: self.workload.lambda.map(R::lit),
            tasks_per_job: self.workload.tasks_per_job,
            mean_work: R::lit(self.workload.mean_work),
        }
    }

    fn shock_schedule<R: Real>(&self) -> ShockSchedule<R> {
        match &self.shocks {
            Some(s) => ShockSchedule {
                period: R::lit(s.period),
                mode: s.mode,
                enabled: true,
            },
            None => ShockSchedule::disabled(),
        }
    }

    /// One run per (policy, seed), policies outermost, in config order.
    pub fn expand<R: Real>(&self) -> Result<Vec<RunSpec<R>>> {
        let mut runs = Vec::with_capacity(self.policies.len() * self.seeds.len());
        for (policy_index, entry) in self.policies.iter().enumerate() {
            for &seed in &self.seeds {
                let mut sim = SimConfig::new(
                    self.cluster.n,
                    self.cluster.speeds.clone(),
                    self.workload(),
                    entry.to_policy(),
                );
                sim.label = entry.label();
                sim.service_mode = self.cluster.service;
                sim.learner = self.learner.as_ref().map(LearnerSection::to_constants);
                sim.benchmarks = entry.benchmarks;
                sim.shocks = self.shock_schedule();
                sim.longest_task = self.bandit.longest_task.map(R::lit);
                sim.max_events = self.budget.max_events;
                sim.max_time = self.budget.max_time.map(R::lit);
                sim.sample_interval = R::lit(self.metrics.sample_interval);
                sim.warmup_fraction = R::lit(self.metrics.warmup_fraction);
                sim.seed = seed;
                sim.mode = self.mode;
                runs.push(RunSpec {
                    policy_index,
                    seed,
                    sim,
                });
            }
        }
        Ok(runs)
    }

    /// Copy with one sweep parameter set to `value`.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match param {
            SweepParam::Alpha => {
                c.workload.alpha = Some(value);
                c.workload.lambda = None;
            }
            SweepParam::N => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(SimError::config(format!(
                        "sweep n = {value} is not a positive integer"
                    )));
                }
                c.cluster.n = value as usize;
            }
            SweepParam::WindowC => {
                let learner = c
                    .learner
                    .as_mut()
                    .ok_or_else(|| SimError::config("sweep window_c needs a [learner] table"))?;
                learner.c = Some(value);
                learner.window = WindowMode::Practical;
            }
            SweepParam::Gamma => {
                let mut hit = false;
                for p in c.policies.iter_mut().filter(|p| p.kind.needs_gamma()) {
                    p.gamma = Some(value);
                    hit = true;
                }
                if !hit {
                    return Err(SimError::config("sweep gamma needs an exp3 or exp4 policy"));
                }
            }
            SweepParam::Eta => {
                let mut hit = false;
                for p in c
                    .policies
                    .iter_mut()
                    .filter(|p| p.kind.needs_explore_prob())
                {
                    p.explore_prob = Some(value);
                    hit = true;
                }
                if !hit {
                    return Err(SimError::config("sweep eta needs a multi_armed policy"));
                }
            }
            SweepParam::ShockPeriod => {
                let mode = c.shocks.as_ref().map(|s| s.mode).unwrap_or_default();
                c.shocks = Some(ShockSection {
                    period: value,
                    mode,
                });
            }
        }
        c.validate()?;
        Ok(c)
    }
}
