//! Experiment driver for lazy FTPL.
//!
//! Exit codes: 0 success, 1 runtime failure or failed checks, 2 bad
//! configuration.

mod config;
mod env;
mod output;
mod run;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};

pub const OUT_ENV: &str = "SMOOTHED_FTPL_OUT";

#[derive(Debug, Parser)]
#[command(name = "smoothed-ftpl", version, about = "Seeded lazy-FTPL experiments with CSV export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (strict JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; SMOOTHED_FTPL_OUT takes precedence.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Master seed, folded with each config seed.
    #[arg(long, value_name = "U64", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute every (T, seed) cell and write run records plus results.csv.
    Run(Common),
    /// Run a validator battery and write verify_<which>.csv.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        which: verify::Which,
    },
    /// Re-run the config once per value of a dotted parameter path.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config path, e.g. learner.eta or run.seeds.
        #[arg(long)]
        param: String,
        /// Values, parsed as JSON where possible.
        #[arg(long, num_args = 0.., allow_hyphen_values = true)]
        values: Vec<String>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
    ChecksFailed {
        failed: usize,
        total: usize,
        report: PathBuf,
    },
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| common.out.clone())
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let jobs = match jobs {
        Some(0) => return Err(ConfigError::field("--jobs", "must be at least 1").into()),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Runtime(e.into()))
}

fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|mut e| {
        e.message = format!("{}: {}", path.display(), e.message);
        Failure::Config(e)
    })
}

fn dispatch(cli: Cli) -> Result<PathBuf, Failure> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common.config)?;
            let pool = pool(common.jobs)?;
            run::cmd_run(&cfg, &out_dir(&common, &cfg), common.seed, &pool)
        }
        Command::Verify { common, which } => {
            let cfg = load(&common.config)?;
            // the batteries parallelize internally on the global pool
            if let Some(j) = common.jobs {
                pool(Some(j))?;
                let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
            }
            verify::cmd_verify(&cfg, which, &out_dir(&common, &cfg), common.seed)
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let cfg = load(&common.config)?;
            let pool = pool(common.jobs)?;
            run::cmd_sweep(&cfg, &param, &values, &out_dir(&common, &cfg), common.seed, &pool)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::ChecksFailed {
            failed,
            total,
            report,
        }) => {
            eprintln!("{failed} of {total} checks failed; see {}", report.display());
            ExitCode::from(1)
        }
    }
}
