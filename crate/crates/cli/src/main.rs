mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use serocontact::par::Schedule;

use crate::config::RunConfig;

/// Age-dependent transmission rates and R0 from serology and contact diaries.
#[derive(Debug, Parser)]
#[command(name = "serocontact", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for simulation and the bootstrap.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything serially.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    serology: Option<PathBuf>,
    #[arg(long)]
    participants: Option<PathBuf>,
    #[arg(long)]
    contacts: Option<PathBuf>,
    #[arg(long)]
    census: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Piecewise-constant force of infection from serology alone.
    FitFoi {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Smoothed contact surface and per-capita contact rates.
    SmoothContacts {
        #[command(flatten)]
        data: DataArgs,
        /// Contact filter, C1 to C5.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Fits candidate transmission models and ranks them by AIC.
    FitModels {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated model names, e.g. C3,M1,W4.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Nonparametric bootstrap of the candidate models.
    Bootstrap {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Synthetic serology, optionally appended to an existing dataset.
    SimulateSerology {
        /// Constant prevalence.
        #[arg(long)]
        prevalence: Option<f64>,
        #[arg(long)]
        n_per_age: Option<usize>,
        /// Existing serology CSV to augment.
        #[arg(long)]
        augment: Option<PathBuf>,
        #[arg(long)]
        total: Option<usize>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files.
    Usage(String),
    /// The numerical machinery failed on valid input.
    Numerical(String),
}

impl From<serocontact::Error> for CliError {
    fn from(e: serocontact::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

/// Settings shared by every command after flags override the config.
pub struct Globals {
    pub seed: u64,
    pub schedule: Schedule,
    pub out: PathBuf,
}

fn apply_data(cfg: &mut RunConfig, data: DataArgs) {
    let d = &mut cfg.data;
    d.serology = data.serology.or(d.serology.take());
    d.participants = data.participants.or(d.participants.take());
    d.contacts = data.contacts.or(d.contacts.take());
    d.census = data.census.or(d.census.take());
}

fn configure_threads(jobs: Option<usize>) -> Result<Schedule, CliError> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(1) => Ok(Schedule::Serial),
        Some(_n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(_n)
                .build_global()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(Schedule::Parallel)
        }
        None => Ok(Schedule::Parallel),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let globals = Globals {
        seed: cli.seed.or(cfg.seed).unwrap_or(1),
        schedule: configure_threads(cli.jobs.or(cfg.jobs))?,
        out: cli.out.or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&globals.out)
        .map_err(|e| CliError::Usage(format!("{}: {e}", globals.out.display())))?;
    match cli.command {
        Command::FitFoi { data } => {
            apply_data(&mut cfg, data);
            commands::fit_foi(&cfg, &globals)
        }
        Command::SmoothContacts { data, filter } => {
            apply_data(&mut cfg, data);
            if let Some(f) = filter {
                cfg.model.filter = f;
            }
            commands::smooth_contacts(&cfg, &globals)
        }
        Command::FitModels { data, models } => {
            apply_data(&mut cfg, data);
            if let Some(m) = models {
                cfg.model.candidates = m;
            }
            commands::fit_models(&cfg, &globals)
        }
        Command::Bootstrap { data, models, replicates } => {
            apply_data(&mut cfg, data);
            if let Some(m) = models {
                cfg.model.candidates = m;
            }
            if let Some(b) = replicates {
                cfg.bootstrap.replicates = b;
            }
            commands::bootstrap(&cfg, &globals)
        }
        Command::SimulateSerology {
            prevalence,
            n_per_age,
            augment,
            total,
        } => {
            let s = &mut cfg.simulate;
            if prevalence.is_some() {
                s.prevalence = prevalence;
                s.foi = None;
            }
            s.n_per_age = n_per_age.or(s.n_per_age);
            s.augment = augment.or(s.augment.take());
            s.total = total.or(s.total);
            commands::simulate_serology(&cfg, &globals)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(1)
        }
    }
}
