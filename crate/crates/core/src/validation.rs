//! Named statistical checks run by `validate`.
//!
//! Each check builds its scenario from the experiment config (cluster,
//! workload, budget, seeds) and swaps in the policies it compares.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytics::{coupled_recovery_run, mm1_tail, ppot_tail, RecoveryConfig};
use crate::bandit::{exp3_regret_run, reward_ceiling, tuned_gamma, tuned_regret_bound};
use crate::config::ExperimentConfig;
use crate::engine::sample_exponential;
use crate::error::{Result, SimError};
use crate::experiment::{histogram_csv, run_experiment, summary_csv, timeseries_csv};
use crate::policy::{PolicyConfig, PolicyKind};
use crate::simulation::{run_simulation, SimConfig, Simulation, StepOutcome};
use crate::workload::SpeedSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Check {
    PotBlowup,
    PssGeometric,
    PpotTail,
    MaxQueueScaling,
    LlPathology,
    LearnerGuarantees,
    L1Monotone,
    RecoverySize,
    ShockOrdering,
    Exp3Bounds,
    Determinism,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::PotBlowup,
        Check::PssGeometric,
        Check::PpotTail,
        Check::MaxQueueScaling,
        Check::LlPathology,
        Check::LearnerGuarantees,
        Check::L1Monotone,
        Check::RecoverySize,
        Check::ShockOrdering,
        Check::Exp3Bounds,
        Check::Determinism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::PotBlowup => "pot-blowup",
            Check::PssGeometric => "pss-geometric",
            Check::PpotTail => "ppot-tail",
            Check::MaxQueueScaling => "max-queue-scaling",
            Check::LlPathology => "ll-pathology",
            Check::LearnerGuarantees => "learner-guarantees",
            Check::L1Monotone => "l1-monotone",
            Check::RecoverySize => "recovery-size",
            Check::ShockOrdering => "shock-ordering",
            Check::Exp3Bounds => "exp3-bounds",
            Check::Determinism => "determinism",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Self::ALL.iter().map(|c| c.name()).collect();
                SimError::config(format!(
                    "unknown check `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    /// `key=value` measurements behind the verdict.
    pub details: Vec<(String, String)>,
}

impl CheckOutcome {
    fn new(check: Check) -> Self {
        CheckOutcome {
            check,
            passed: true,
            details: Vec::new(),
        }
    }

    fn note(&mut self, key: &str, value: impl fmt::Display) {
        self.details.push((key.to_string(), value.to_string()));
    }

    fn require(&mut self, key: &str, ok: bool) {
        self.note(key, if ok { "ok" } else { "violated" });
        self.passed &= ok;
    }

    /// One machine-readable line: `check=<name> status=<pass|fail> k=v ...`.
    pub fn line(&self) -> String {
        let mut s = format!(
            "check={} status={}",
            self.check,
            if self.passed { "pass" } else { "fail" }
        );
        for (k, v) in &self.details {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

/// Checks listed in the config's `[validate]` table.
pub fn configured_checks(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let section = config
        .validate
        .as_ref()
        .ok_or_else(|| SimError::config("validate: config has no [validate] table with checks"))?;
    if section.checks.is_empty() {
        return Err(SimError::config("validate.checks must not be empty"));
    }
    section.checks.iter().map(|c| Check::parse(c)).collect()
}

/// Checks preconditions of every selected check before anything runs.
pub fn preflight(config: &ExperimentConfig, checks: &[Check]) -> Result<()> {
    for &c in checks {
        match c {
            Check::PssGeometric
            | Check::PpotTail
            | Check::MaxQueueScaling
            | Check::L1Monotone
            | Check::RecoverySize => {
                configured_alpha(config, c)?;
            }
            Check::LearnerGuarantees | Check::ShockOrdering if config.learner.is_none() => {
                return Err(SimError::config(format!(
                    "check `{c}` needs a [learner] table"
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn run_checks(config: &ExperimentConfig, checks: &[Check]) -> Result<Vec<CheckOutcome>> {
    preflight(config, checks)?;
    checks.iter().map(|&c| run_check(config, c)).collect()
}

pub fn run_check(config: &ExperimentConfig, check: Check) -> Result<CheckOutcome> {
    match check {
        Check::PotBlowup => pot_blowup(config),
        Check::PssGeometric => pss_geometric(config),
        Check::PpotTail => ppot_tail_check(config),
        Check::MaxQueueScaling => max_queue_scaling(config),
        Check::LlPathology => ll_pathology(config),
        Check::LearnerGuarantees => learner_guarantees(config),
        Check::L1Monotone => l1_monotone(config),
        Check::RecoverySize => recovery_size(config),
        Check::ShockOrdering => shock_ordering(config),
        Check::Exp3Bounds => exp3_bounds(config),
        Check::Determinism => determinism(config),
    }
}

fn configured_alpha(config: &ExperimentConfig, check: Check) -> Result<f64> {
    let alpha = config
        .workload
        .alpha
        .ok_or_else(|| SimError::config(format!("check `{check}` needs workload.alpha")))?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SimError::config(format!(
            "check `{check}`: workload.alpha = {alpha} is outside (0, 1); no stationary regime"
        )));
    }
    Ok(alpha)
}

fn base(config: &ExperimentConfig) -> Result<SimConfig<f64>> {
    config
        .expand::<f64>()?
        .into_iter()
        .next()
        .map(|spec| spec.sim)
        .ok_or_else(|| SimError::config("config expands to no runs"))
}

fn with_policy(mut sim: SimConfig<f64>, policy: PolicyConfig<f64>) -> SimConfig<f64> {
    sim.label = policy.kind.name().to_string();
    sim.policy = policy;
    sim
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn pot_blowup(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::PotBlowup);
    let mut sim = base(config)?;
    sim.warmup_fraction = 0.0;
    let budget = sim.max_events.unwrap_or(200_000);
    sim.max_events = Some(budget);
    let mut pot = Simulation::new(with_policy(
        sim.clone(),
        PolicyConfig::simple(PolicyKind::Pot),
    ))?;
    let slowest = pot.speeds().iter().copied().fold(f64::INFINITY, f64::min);
    let slow: Vec<usize> = (0..pot.speeds().len())
        .filter(|&i| pot.speeds()[i] == slowest)
        .collect();
    let slow_mean =
        |loads: &[usize]| slow.iter().map(|&i| loads[i] as f64).sum::<f64>() / slow.len() as f64;
    let mut half = None;
    while pot.step()? != StepOutcome::Finished {
        if half.is_none() && pot.events() >= budget / 2 {
            half = Some(slow_mean(pot.loads()));
        }
    }
    let end = slow_mean(pot.loads());
    let report = pot.finish()?;
    let slow_rate: f64 = report
        .group_rates
        .iter()
        .filter(|g| g.speed == slowest)
        .map(|g| g.arrival_rate)
        .sum();
    let half = half.unwrap_or(0.0);
    out.note("pot_slow_arrival_rate", format!("{slow_rate:.4}"));
    out.note("pot_slow_queue_half", format!("{half:.2}"));
    out.note("pot_slow_queue_end", format!("{end:.2}"));
    out.require("pot_grows", end > 1.5 * half && half > 0.0);
    let mut ppot = Simulation::new(with_policy(sim, PolicyConfig::simple(PolicyKind::PpotSq)))?;
    let mut max_queue = 0;
    while ppot.step()? != StepOutcome::Finished {
        max_queue = max_queue.max(ppot.loads().iter().copied().max().unwrap_or(0));
    }
    out.note("ppot_max_queue", max_queue);
    out.require("ppot_bounded", max_queue < 50);
    Ok(out)
}

fn pss_geometric(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let alpha = configured_alpha(config, Check::PssGeometric)?;
    let mut out = CheckOutcome::new(Check::PssGeometric);
    let report = run_simulation(with_policy(
        base(config)?,
        PolicyConfig::simple(PolicyKind::Pss),
    ))?;
    let mut worst = 0.0f64;
    for w in 0..report.n() {
        for k in 1..=5u32 {
            let d = (report.worker_tail(w, k as usize) - mm1_tail(alpha, k)?).abs();
            worst = worst.max(d);
        }
    }
    out.note("worst_abs_deviation", format!("{worst:.4}"));
    out.require("within_0.02", worst <= 0.02);
    Ok(out)
}

fn ppot_tail_check(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let alpha = configured_alpha(config, Check::PpotTail)?;
    let mut out = CheckOutcome::new(Check::PpotTail);
    let report = run_simulation(with_policy(
        base(config)?,
        PolicyConfig::simple(PolicyKind::PpotSq),
    ))?;
    let mut ok = true;
    for k in 1..=3u32 {
        let measured = report.fraction_tail(k as usize);
        let oracle = ppot_tail(alpha, k)?;
        let ratio = measured / oracle;
        out.note(&format!("ratio_k{k}"), format!("{ratio:.3}"));
        ok &= (0.5..=2.0).contains(&ratio);
    }
    out.require("within_factor_2", ok);
    Ok(out)
}

/// Equal time at every size, so larger clusters are not cut short.
const SCALING_HORIZON: f64 = 1500.0;

fn max_queue_scaling(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let alpha = configured_alpha(config, Check::MaxQueueScaling)?;
    let mut out = CheckOutcome::new(Check::MaxQueueScaling);
    let sizes: Vec<usize> = match &config.sweep {
        Some(s) if s.parameter == "n" => s.values.iter().map(|&v| v as usize).collect(),
        _ => vec![256, 1024, 4096],
    };
    let mut curves = Vec::new();
    for kind in [PolicyKind::PpotSq, PolicyKind::Pss] {
        let mut curve = Vec::new();
        for &n in &sizes {
            let mut per_seed = Vec::new();
            for &seed in &config.seeds {
                let mut sim = base(config)?;
                sim.n = n;
                sim.speeds = SpeedSpec::Homogeneous(1.0);
                sim.workload.alpha = Some(alpha);
                sim.workload.lambda = None;
                sim.seed = seed;
                sim.max_events = None;
                sim.max_time = Some(config.budget.max_time.unwrap_or(SCALING_HORIZON));
                let r = run_simulation(with_policy(sim, PolicyConfig::simple(kind)))?;
                per_seed.push(r.mean_max_queue().unwrap_or(0.0));
            }
            curve.push(mean(&per_seed));
        }
        out.note(
            &format!("{}_max_queue", kind.name()),
            curve
                .iter()
                .map(|q| format!("{q:.2}"))
                .collect::<Vec<_>>()
                .join("/"),
        );
        curves.push(curve);
    }
    let ppot_ok = curves[0].windows(2).all(|w| w[1] - w[0] <= 2.0);
    let pss_ok = curves[1].windows(2).all(|w| w[1] - w[0] >= 1.5);
    out.require("ppot_loglog", ppot_ok);
    out.require("pss_log", pss_ok);
    Ok(out)
}

fn ll_pathology(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::LlPathology);
    let sim = base(config)?;
    let ll = run_simulation(with_policy(
        sim.clone(),
        PolicyConfig::simple(PolicyKind::PpotLl),
    ))?;
    let sq = run_simulation(with_policy(sim, PolicyConfig::simple(PolicyKind::PpotSq)))?;
    let fastest = (0..ll.workers.len())
        .max_by(|&a, &b| ll.workers[a].speed.total_cmp(&ll.workers[b].speed))
        .ok_or_else(|| SimError::config("ll-pathology needs workers"))?;
    let fast = ll.workers[fastest].speed;
    let slow = ll
        .workers
        .iter()
        .map(|w| w.speed)
        .fold(f64::INFINITY, f64::min);
    let scale = fast / slow;
    let ll_queue = ll.workers[fastest].mean_load;
    let sq_queue = sq.workers[fastest].mean_load;
    let ll_resp = ll.workers[fastest].mean_task_response.unwrap_or(0.0);
    out.note("ll_fast_queue", format!("{ll_queue:.2}"));
    out.note("ll_fast_response", format!("{ll_resp:.3}"));
    out.note("sq_fast_queue", format!("{sq_queue:.2}"));
    let (ll_mean, sq_mean) = (
        ll.mean_response.unwrap_or(f64::NAN),
        sq.mean_response.unwrap_or(f64::NAN),
    );
    out.note("ll_mean_response", format!("{ll_mean:.4}"));
    out.note("sq_mean_response", format!("{sq_mean:.4}"));
    out.require("ll_congests_fast_worker", ll_queue >= 0.6 * (scale - 1.0));
    out.require("ll_fast_as_slow", ll_resp >= 0.7 / slow);
    out.require("sq_relieves_fast_worker", sq_queue <= ll_queue / 3.0);
    out.require("sq_lower_mean_response", sq_mean < ll_mean);
    Ok(out)
}

/// Fraction of post-warm-up samples in which each worker's estimate lies in
/// `[(1 - 2 eps) mu, (1 + eps) mu]`, and whether each worker below the
/// cutoff stayed at zero over the second half of those samples.
pub fn learner_band_fractions(sim: SimConfig<f64>) -> Result<(Vec<f64>, Vec<bool>, Vec<f64>)> {
    let interval = sim.sample_interval;
    let mut s = Simulation::new(sim)?;
    let n = s.speeds().len();
    let mut hits = vec![0usize; n];
    let mut zero_track: Vec<Vec<bool>> = vec![Vec::new(); n];
    let mut samples = 0usize;
    let mut next = 0.0;
    while s.step()? != StepOutcome::Finished {
        if s.in_warmup() || s.now() < next {
            continue;
        }
        next = s.now() + interval;
        let l = s
            .learner()
            .ok_or_else(|| SimError::config("learner check needs learned speeds"))?;
        let eps = l.params().epsilon;
        samples += 1;
        for i in 0..n {
            let (mu, est) = (s.speeds()[i], l.mu_hat()[i]);
            if est >= (1.0 - 2.0 * eps) * mu && est <= (1.0 + eps) * mu {
                hits[i] += 1;
            }
            zero_track[i].push(est == 0.0);
        }
    }
    let speeds = s.speeds().to_vec();
    let fractions = hits
        .iter()
        .map(|&h| h as f64 / samples.max(1) as f64)
        .collect();
    let zeroed = zero_track
        .iter()
        .map(|t| !t.is_empty() && t[t.len() / 2..].iter().all(|&z| z))
        .collect();
    Ok((fractions, zeroed, speeds))
}

fn learner_guarantees(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::LearnerGuarantees);
    let policy = PolicyConfig::simple(PolicyKind::PpotSq).learned();
    let mut sim = with_policy(base(config)?, policy);
    sim.benchmarks = true;
    let alpha = sim
        .workload
        .alpha
        .ok_or_else(|| SimError::config("learner-guarantees needs workload.alpha"))?;
    let (fractions, zeroed, speeds) = learner_band_fractions(sim)?;
    let eps = 0.3 * (1.0 - alpha);
    let cutoff = (1.0 - eps) * (1.0 - alpha) / 10.0;
    let mut worst = 1.0f64;
    let mut all_zeroed = true;
    for i in 0..speeds.len() {
        if speeds[i] >= cutoff {
            worst = worst.min(fractions[i]);
        } else {
            all_zeroed &= zeroed[i];
        }
    }
    out.note("worst_in_band_fraction", format!("{worst:.4}"));
    out.require("estimates_in_band", worst >= 0.95);
    out.require("slow_workers_zeroed", all_zeroed);
    Ok(out)
}

fn recovery_config(
    config: &ExperimentConfig,
    n: usize,
    check: Check,
) -> Result<RecoveryConfig<f64>> {
    let alpha = configured_alpha(config, check)?;
    let seed = config.seeds[0];
    Ok(RecoveryConfig::homogeneous(n, alpha, 20, seed))
}

fn l1_monotone(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::L1Monotone);
    let result = coupled_recovery_run(&recovery_config(
        config,
        config.cluster.n,
        Check::L1Monotone,
    )?)?;
    out.note("samples", result.samples.len());
    out.note("final_l1", result.final_l1);
    out.require(
        "l1_non_increasing",
        result.l1_monotone && result.sampled_l1_non_increasing(),
    );
    Ok(out)
}

fn recovery_size(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::RecoverySize);
    let mut times = Vec::new();
    for n in [256, 4096] {
        let r = coupled_recovery_run(&recovery_config(config, n, Check::RecoverySize)?)?;
        let t = r.recovery_time;
        out.note(
            &format!("recovery_time_n{n}"),
            t.map_or("none".into(), |t| format!("{t:.2}")),
        );
        times.push(t);
    }
    let ok = match (times[0], times[1]) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => a.max(b) / a.min(b) <= 2.0,
        _ => false,
    };
    out.require("size_independent", ok);
    Ok(out)
}

fn shock_ordering(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::ShockOrdering);
    let contenders = [
        (
            "ppot_sq+learning",
            PolicyConfig::simple(PolicyKind::PpotSq).learned(),
            true,
        ),
        (
            "pss+learning",
            PolicyConfig::simple(PolicyKind::Pss).learned(),
            true,
        ),
        (
            "multi_armed",
            PolicyConfig::multi_armed(0.2).learned(),
            false,
        ),
    ];
    let mut means = Vec::new();
    for (name, policy, benchmarks) in contenders {
        let mut per_seed = Vec::new();
        for &seed in &config.seeds {
            let mut sim = with_policy(base(config)?, policy.clone());
            sim.benchmarks = benchmarks;
            sim.seed = seed;
            per_seed.push(run_simulation(sim)?.mean_response.unwrap_or(f64::INFINITY));
        }
        let m = mean(&per_seed);
        out.note(&format!("{name}_mean_response"), format!("{m:.4}"));
        means.push(m);
    }
    out.require(
        "learned_ppot_best",
        means[0] < means[1] && means[0] < means[2],
    );
    out.require("pss_beats_multi_armed", means[1] < means[2]);
    Ok(out)
}

fn exp3_bounds(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::Exp3Bounds);
    let speeds = match &config.cluster.speeds {
        SpeedSpec::Explicit(v) => v.clone(),
        _ => vec![2.0, 1.0, 0.5, 0.25],
    };
    let rounds = 10_000;
    let mean_work = config.workload.mean_work;
    let fastest = speeds.iter().copied().fold(0.0, f64::max);
    let slowest = speeds.iter().copied().fold(f64::INFINITY, f64::min);
    let g = reward_ceiling(rounds, slowest, fastest);
    let gamma_star = tuned_gamma(speeds.len(), g);
    let tuned_bound = tuned_regret_bound(speeds.len(), g);
    let mut theorem_ok = true;
    let mut tuned_ok = true;
    let mut worst = f64::NEG_INFINITY;
    for &seed in &config.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let works: Vec<f64> = (0..rounds)
            .map(|_| sample_exponential(&mut rng, 1.0 / mean_work))
            .collect::<Result<_>>()?;
        for gamma in [0.1, gamma_star] {
            let run = exp3_regret_run(&speeds, &works, gamma, &mut rng)?;
            theorem_ok &= run.regret() <= run.theorem_bound;
            if gamma == gamma_star {
                tuned_ok &= run.regret() <= tuned_bound;
                worst = worst.max(run.regret());
            }
        }
    }
    out.note("tuned_gamma", format!("{gamma_star:.4}"));
    out.note("worst_tuned_regret", format!("{worst:.2}"));
    out.note("tuned_bound", format!("{tuned_bound:.2}"));
    out.require("theorem_bound", theorem_ok);
    out.require("tuned_bound", tuned_ok);
    Ok(out)
}

fn determinism(config: &ExperimentConfig) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(Check::Determinism);
    let a = run_experiment::<f64>(config, None)?;
    let b = run_experiment::<f64>(config, Some(1))?;
    let same = summary_csv(&a)? == summary_csv(&b)?
        && timeseries_csv(&a)? == timeseries_csv(&b)?
        && histogram_csv(&a)? == histogram_csv(&b)?;
    out.note("runs", a.len());
    out.require("identical_csv", same);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
seeds = [3]
[cluster]
n = 16
speeds = {{ explicit = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1] }}
[workload]
{extra}
[[policies]]
kind = "ppot_sq"
[budget]
max_events = 3000
"#
        ))
        .unwrap()
    }

    #[test]
    fn names_round_trip() {
        for c in Check::ALL {
            assert_eq!(Check::parse(c.name()).unwrap(), c);
        }
        assert!(Check::parse("blowup").is_err());
    }

    #[test]
    fn geometric_check_rejects_overload_before_running() {
        let c = config("alpha = 1.2");
        let err = preflight(&c, &[Check::PssGeometric]).unwrap_err();
        assert!(matches!(err, SimError::Config(_)));
        assert!(run_check(&c, Check::PssGeometric).is_err());
        let c = config("lambda = 3.0");
        assert!(preflight(&c, &[Check::PpotTail]).is_err());
    }

    #[test]
    fn l1_monotone_passes() {
        let c = config("alpha = 0.5");
        let out = run_check(&c, Check::L1Monotone).unwrap();
        assert!(out.passed, "{}", out.line());
        assert!(out.line().starts_with("check=l1-monotone status=pass"));
    }

    #[test]
    fn determinism_passes() {
        let out = run_check(&config("alpha = 0.5"), Check::Determinism).unwrap();
        assert!(out.passed);
    }
}
