use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hetsched::config::{ExperimentConfig, SweepParam};
use hetsched::experiment::{run_experiment, run_sweep, write_atomic, write_outputs};
use hetsched::presets::{self, PRESETS};
use hetsched::validation::{configured_checks, run_checks, Check};
use hetsched::SimError;

const VALIDATION_FILE: &str = "validation.txt";

#[derive(Parser)]
#[command(
    name = "hetsched",
    version,
    about = "Heterogeneous cluster scheduling simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, seed) pair of a config.
    Run(Common),
    /// Repeat a run over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to vary; defaults to the config's [sweep] table.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Run named statistical checks.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Checks to run; defaults to the config's [validate] table.
        #[arg(long = "check")]
        checks: Vec<String>,
    },
    /// Built-in configs.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's config.
    Show {
        name: String,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    parallel: Option<usize>,
}

enum Failure {
    Sim(SimError),
    Validation,
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Sim(e)
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, SimError> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => presets::load(name)?,
            (None, None) => return Err(SimError::config("pass --config or --preset")),
        };
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            config.output.dir = Some(out.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output_dir()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new("results").join(config.name.as_deref().unwrap_or("run")))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(common) => {
            let config = common.load()?;
            log::info!(
                "running {} policies x {} seeds",
                config.policies.len(),
                config.seeds.len()
            );
            let records = run_experiment::<f64>(&config, common.parallel)?;
            let dir = out_dir(&config);
            write_outputs(&dir, &config, &records)?;
            println!("{} runs written to {}", records.len(), dir.display());
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let config = common.load()?;
            let section = config.sweep.as_ref();
            let name = param
                .or_else(|| section.map(|s| s.parameter.clone()))
                .ok_or_else(|| SimError::config("sweep needs --param or a [sweep] table"))?;
            let param = SweepParam::parse(&name)?;
            let values = values
                .or_else(|| section.map(|s| s.values.clone()))
                .ok_or_else(|| SimError::config("sweep needs --values or a [sweep] table"))?;
            let records = run_sweep::<f64>(&config, param, &values, common.parallel)?;
            let dir = out_dir(&config);
            write_outputs(&dir, &config, &records)?;
            println!("{} runs written to {}", records.len(), dir.display());
        }
        Command::Validate { common, checks } => {
            let config = common.load()?;
            let checks = if checks.is_empty() {
                configured_checks(&config)?
            } else {
                checks
                    .iter()
                    .map(|c| Check::parse(c))
                    .collect::<Result<_, _>>()?
            };
            let outcomes = run_checks(&config, &checks)?;
            let mut text = String::new();
            for o in &outcomes {
                text.push_str(&o.line());
                text.push('\n');
            }
            print!("{text}");
            if let Some(dir) = &common.out {
                std::fs::create_dir_all(dir)
                    .map_err(|e| SimError::io(dir.display().to_string(), e))?;
                write_atomic(&dir.join(VALIDATION_FILE), text.as_bytes())?;
            }
            if outcomes.iter().any(|o| !o.passed) {
                return Err(Failure::Validation);
            }
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for p in &PRESETS {
                    println!("{:<16} {}", p.name, p.summary);
                }
            }
            PresetAction::Show { name } => print!("{}", presets::find(&name)?.source),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(3),
        Err(Failure::Sim(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                SimError::Config(_) => 1,
                SimError::Fault(_) | SimError::Io { .. } | SimError::Csv(_) => 2,
            })
        }
    }
}
