//! Runs, sweeps and the CSV files they produce.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::analytics::MetricsReport;
use crate::config::{ExperimentConfig, RunSpec, SweepParam};
use crate::error::{Result, SimError};
use crate::scalar::Real;
use crate::simulation::run_simulation;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

pub const SUMMARY_COLUMNS: [&str; 18] = [
    "policy",
    "seed",
    "alpha",
    "n",
    "p5",
    "p25",
    "p50",
    "p75",
    "p95",
    "mean",
    "mean_wait",
    "max_queue",
    "learn_error_final",
    "throughput",
    "benchmark_overhead",
    "jobs_completed",
    "events",
    "end_time",
];

pub const TIMESERIES_COLUMNS: [&str; 8] = [
    "policy",
    "seed",
    "time",
    "max_queue",
    "l1",
    "l0",
    "lambda_hat",
    "mu_hat_error",
];

pub const HISTOGRAM_COLUMNS: [&str; 5] = ["policy", "seed", "worker_id", "queue_len", "count"];

/// Sweep columns prepended to every file written by [`sweep`].
pub const SWEEP_COLUMNS: [&str; 2] = ["param", "value"];

/// A finished run and the sweep point it belongs to, if any.
#[derive(Clone, Debug)]
pub struct RunRecord<R> {
    pub point: Option<(SweepParam, f64)>,
    pub report: MetricsReport<R>,
}

fn opt<R: Real>(x: Option<R>) -> String {
    x.map(|v| v.as_f64().to_string()).unwrap_or_default()
}

fn num<R: Real>(x: R) -> String {
    x.as_f64().to_string()
}

fn pool(parallel: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = parallel {
        if k == 0 {
            return Err(SimError::config("--parallel must be at least 1"));
        }
        builder = builder.num_threads(k);
    }
    builder
        .build()
        .map_err(|e| SimError::fault(format!("thread pool: {e}")))
}

/// Runs every spec, in parallel, and returns the reports in input order.
pub fn execute<R: Real>(
    specs: Vec<RunSpec<R>>,
    parallel: Option<usize>,
) -> Result<Vec<MetricsReport<R>>> {
    let pool = pool(parallel)?;
    pool.install(|| {
        specs
            .into_par_iter()
            .map(|spec| run_simulation(spec.sim))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect()
}

/// One run per (policy, seed).
pub fn run_experiment<R: Real>(
    config: &ExperimentConfig,
    parallel: Option<usize>,
) -> Result<Vec<RunRecord<R>>> {
    let reports = execute(config.expand()?, parallel)?;
    Ok(reports
        .into_iter()
        .map(|report| RunRecord {
            point: None,
            report,
        })
        .collect())
}

/// One run per (value, policy, seed), ordered that way.
pub fn run_sweep<R: Real>(
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    parallel: Option<usize>,
) -> Result<Vec<RunRecord<R>>> {
    if values.is_empty() {
        return Err(SimError::config("sweep needs at least one value"));
    }
    let mut specs = Vec::new();
    let mut points = Vec::new();
    for &v in values {
        let point = config.with_param(param, v)?;
        for spec in point.expand()? {
            specs.push(spec);
            points.push((param, v));
        }
    }
    let reports = execute(specs, parallel)?;
    Ok(points
        .into_iter()
        .zip(reports)
        .map(|(p, report)| RunRecord {
            point: Some(p),
            report,
        })
        .collect())
}

fn header(base: &[&str], swept: bool) -> Vec<String> {
    let prefix: &[&str] = if swept { &SWEEP_COLUMNS } else { &[] };
    prefix.iter().chain(base).map(|s| s.to_string()).collect()
}

fn prefix(point: Option<(SweepParam, f64)>) -> Vec<String> {
    match point {
        Some((p, v)) => vec![p.name().to_string(), v.to_string()],
        None => Vec::new(),
    }
}

fn summary_row<R: Real>(r: &MetricsReport<R>) -> Vec<String> {
    let pct = |i: usize| {
        r.response
            .as_ref()
            .map(|p| num(p.values[i]))
            .unwrap_or_default()
    };
    vec![
        r.meta.policy.clone(),
        r.meta.seed.to_string(),
        num(r.meta.alpha),
        r.meta.n.to_string(),
        pct(0),
        pct(1),
        pct(2),
        pct(3),
        pct(4),
        opt(r.mean_response),
        opt(r.mean_wait),
        r.max_queue.map(|q| q.to_string()).unwrap_or_default(),
        opt(r.learn_error_final),
        num(r.throughput),
        num(r.benchmark_overhead),
        r.jobs_completed.to_string(),
        r.events.to_string(),
        num(r.end_time),
    ]
}

fn to_csv(rows: impl IntoIterator<Item = Vec<String>>, header: Vec<String>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| SimError::fault(format!("csv buffer: {e}")))
}

pub fn summary_csv<R: Real>(records: &[RunRecord<R>]) -> Result<Vec<u8>> {
    let swept = records.iter().any(|r| r.point.is_some());
    let rows = records.iter().map(|rec| {
        let mut row = prefix(rec.point);
        row.extend(summary_row(&rec.report));
        row
    });
    to_csv(rows, header(&SUMMARY_COLUMNS, swept))
}

/// Stationary samples only.
pub fn timeseries_csv<R: Real>(records: &[RunRecord<R>]) -> Result<Vec<u8>> {
    let swept = records.iter().any(|r| r.point.is_some());
    let rows = records.iter().flat_map(|rec| {
        let r = &rec.report;
        r.timeseries.iter().filter(|s| s.stationary).map(move |s| {
            let mut row = prefix(rec.point);
            row.extend([
                r.meta.policy.clone(),
                r.meta.seed.to_string(),
                num(s.time),
                s.max_queue.to_string(),
                opt(s.l1),
                opt(s.l0),
                opt(s.lambda_hat),
                opt(s.mu_hat_error),
            ]);
            row
        })
    });
    to_csv(rows, header(&TIMESERIES_COLUMNS, swept))
}

/// Non-zero histogram cells only.
pub fn histogram_csv<R: Real>(records: &[RunRecord<R>]) -> Result<Vec<u8>> {
    let swept = records.iter().any(|r| r.point.is_some());
    let rows = records.iter().flat_map(|rec| {
        let r = &rec.report;
        r.histograms.iter().enumerate().flat_map(move |(w, h)| {
            h.counts()
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(move |(q, &c)| {
                    let mut row = prefix(rec.point);
                    row.extend([
                        r.meta.policy.clone(),
                        r.meta.seed.to_string(),
                        w.to_string(),
                        q.to_string(),
                        c.to_string(),
                    ]);
                    row
                })
        })
    });
    to_csv(rows, header(&HISTOGRAM_COLUMNS, swept))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| {
        SimError::config(format!("output path {} has no file name", path.display()))
    })?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let io = |e| SimError::io(path.display().to_string(), e);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

/// Writes the three CSVs and the config echo into `dir`.
pub fn write_outputs<R: Real>(
    dir: &Path,
    config: &ExperimentConfig,
    records: &[RunRecord<R>],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir.display().to_string(), e))?;
    write_atomic(&dir.join(SUMMARY_FILE), &summary_csv(records)?)?;
    write_atomic(&dir.join(TIMESERIES_FILE), &timeseries_csv(records)?)?;
    write_atomic(&dir.join(HISTOGRAM_FILE), &histogram_csv(records)?)?;
    write_atomic(&dir.join(CONFIG_ECHO_FILE), config.to_toml()?.as_bytes())?;
    Ok(())
}
