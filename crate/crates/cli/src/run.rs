//! `run` and `sweep`: seeded execution of every (T, seed) cell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use smoothed_ftpl::analysis::{compute_regret, fit_regret_exponent, mean_stability, RegretReport, RunRecord};
use smoothed_ftpl::ftpl::{HyperParams, LazyFtpl};
use smoothed_ftpl::rng::child_seed;

use crate::config::{set_path, ConfigError, ExperimentConfig, Format};
use crate::env::Experiment;
use crate::output::{csv_bytes, float, write_atomic};
use crate::Failure;

pub const RUN_HEADER: [&str; 10] = [
    "env",
    "T",
    "n",
    "eta",
    "seed",
    "regret",
    "avg_regret",
    "oracle_calls",
    "mean_stability",
    "wall_ms",
];

/// Seed handed to the core for config seed `seed` under master seed
/// `master`: `child_seed(master, seed)`. The same config seed gives the same
/// stream at every horizon, so runs pair across T.
pub fn run_seed(master: u64, seed: u64) -> u64 {
    child_seed(master, seed)
}

#[derive(Serialize)]
struct RunArtifact<'a> {
    env: &'a str,
    config_seed: u64,
    master_seed: u64,
    regret: &'a RegretReport,
    mean_stability: f64,
    record: &'a RunRecord,
}

struct CellResult {
    horizon: usize,
    regret: f64,
    row: Vec<String>,
}

/// Rows of one configuration, in config order, followed by the exponent fit
/// when more than one horizon is present. Failed cells are reported, not
/// written.
pub struct Execution {
    pub rows: Vec<Vec<String>>,
    pub failures: Vec<String>,
}

pub fn execute(
    exp: &Experiment,
    out: &Path,
    run_prefix: &str,
    master: u64,
    pool: &rayon::ThreadPool,
) -> Result<Execution, ConfigError> {
    let cfg = &exp.config;
    let env = exp.name();
    // tuning problems are configuration problems: surface them before any run
    let hypers: BTreeMap<usize, HyperParams> = cfg
        .run
        .horizons
        .iter()
        .map(|&t| exp.hyper(t).map(|h| (t, h)))
        .collect::<Result<_, _>>()?;
    let cells: Vec<(usize, u64)> = cfg
        .run
        .horizons
        .iter()
        .flat_map(|&t| cfg.run.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let write_json = cfg.output.formats.contains(&Format::Json);

    let results: Vec<Result<CellResult, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(horizon, seed)| {
                let dir = out.join("runs").join(format!("{run_prefix}T{horizon}_seed{seed}"));
                run_cell(exp, &env, &hypers[&horizon], horizon, seed, master, write_json.then_some(dir.as_path()))
                    .map_err(|e| format!("T={horizon} seed={seed}: {e:#}"))
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut by_horizon: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in results {
        match r {
            Ok(cell) => {
                by_horizon.entry(cell.horizon).or_default().push(cell.regret);
                rows.push(cell.row);
            }
            Err(e) => failures.push(e),
        }
    }
    if cfg.run.horizons.iter().collect::<std::collections::BTreeSet<_>>().len() > 1 {
        let points: Vec<(f64, f64)> = by_horizon
            .iter()
            .map(|(t, regs)| (*t as f64, regs.iter().sum::<f64>() / regs.len() as f64))
            .collect();
        let (slope, se) = match fit_regret_exponent(&points) {
            Ok(fit) => (fit.slope, fit.se),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let mut fit_row = vec![String::new(); RUN_HEADER.len()];
        fit_row[0] = format!("{env}/fit");
        fit_row[5] = float(slope);
        fit_row[6] = float(se);
        rows.push(fit_row);
    }
    Ok(Execution { rows, failures })
}

fn run_cell(
    exp: &Experiment,
    env: &str,
    hyper: &HyperParams,
    horizon: usize,
    seed: u64,
    master: u64,
    json_dir: Option<&Path>,
) -> anyhow::Result<CellResult> {
    let start = Instant::now();
    let solver = exp.solver();
    let setup = LazyFtpl {
        loss: exp.loss(),
        space: exp.space(),
        adversary: exp.adversary.as_ref(),
        solver: solver.as_ref(),
        perturbation: exp.perturbation(),
    };
    let record = setup.run(hyper, horizon, run_seed(master, seed))?;
    for w in &record.warnings {
        eprintln!("warning: T={horizon} seed={seed}: {w}");
    }
    if !record.valid {
        anyhow::bail!("run stopped early: {}", record.error.as_deref().unwrap_or("unknown error"));
    }
    let report = compute_regret(&record, exp.loss(), exp.space(), solver.as_ref())?;
    let stability = mean_stability(&record);
    let wall_ms = start.elapsed().as_millis();
    if let Some(dir) = json_dir {
        let artifact = RunArtifact {
            env,
            config_seed: seed,
            master_seed: master,
            regret: &report,
            mean_stability: stability,
            record: &record,
        };
        write_atomic(&dir.join("run.json"), &serde_json::to_vec_pretty(&artifact)?)?;
    }
    let row = vec![
        env.to_string(),
        horizon.to_string(),
        hyper.n.to_string(),
        float(hyper.eta),
        seed.to_string(),
        float(report.regret),
        float(report.avg_regret),
        record.oracle_calls.to_string(),
        float(stability),
        wall_ms.to_string(),
    ];
    Ok(CellResult {
        horizon,
        regret: report.regret,
        row,
    })
}

/// Writes the aggregate CSV; on failures, also a `FAILED` file listing them
/// so partial outputs are recognizable.
fn finish(out: &Path, csv_name: &str, header: &[&str], exec: &Execution, write_csv: bool) -> Result<(), Failure> {
    if write_csv {
        let bytes = csv_bytes(header, &exec.rows).map_err(Failure::Runtime)?;
        write_atomic(&out.join(csv_name), &bytes).map_err(Failure::Runtime)?;
    }
    let marker = out.join("FAILED");
    if exec.failures.is_empty() {
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(|e| Failure::Runtime(e.into()))?;
        }
        Ok(())
    } else {
        let text = exec.failures.join("\n") + "\n";
        write_atomic(&marker, text.as_bytes()).map_err(Failure::Runtime)?;
        for f in &exec.failures {
            eprintln!("error: {f}");
        }
        Err(Failure::Runtime(anyhow::anyhow!(
            "{} of the runs failed; outputs in {} are partial",
            exec.failures.len(),
            out.display()
        )))
    }
}

pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, master: u64, pool: &rayon::ThreadPool) -> Result<PathBuf, Failure> {
    let exp = Experiment::build(cfg)?;
    let exec = execute(&exp, out, "", master, pool)?;
    let write_csv = cfg.output.formats.contains(&Format::Csv);
    finish(out, "results.csv", &RUN_HEADER, &exec, write_csv)?;
    Ok(out.join("results.csv"))
}

/// Parses a sweep value as JSON, falling back to a bare string.
fn sweep_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    param: &str,
    values: &[String],
    out: &Path,
    master: u64,
    pool: &rayon::ThreadPool,
) -> Result<PathBuf, Failure> {
    if values.is_empty() {
        return Err(ConfigError::field("--values", "sweep needs at least one value").into());
    }
    let base = serde_json::to_value(cfg).map_err(|e| Failure::Runtime(e.into()))?;
    // build every variant first so a bad value fails before any run
    let mut variants = Vec::with_capacity(values.len());
    for raw in values {
        let mut v = base.clone();
        set_path(&mut v, param, sweep_value(raw))?;
        let variant = ExperimentConfig::from_value(v)?;
        variants.push((raw, Experiment::build(&variant)?));
    }
    let mut all = Execution {
        rows: Vec::new(),
        failures: Vec::new(),
    };
    for (i, (raw, exp)) in variants.iter().enumerate() {
        let exec = execute(exp, out, &format!("sweep{i}_"), master, pool)?;
        all.rows.extend(exec.rows.into_iter().map(|mut r| {
            r.push(raw.to_string());
            r
        }));
        all.failures
            .extend(exec.failures.into_iter().map(|f| format!("{param}={raw}: {f}")));
    }
    let mut header = RUN_HEADER.to_vec();
    header.push("sweep_value");
    let write_csv = cfg.output.formats.contains(&Format::Csv);
    finish(out, "sweep.csv", &header, &all, write_csv)?;
    Ok(out.join("sweep.csv"))
}
