//! `verify`: validator batteries with a per-check report.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use smoothed_ftpl::analysis::{
    build_generalized_bracket, check_concentration, verify_bracket, ConcentrationTrial, BRACKET_CELL_LIMIT,
};
use smoothed_ftpl::planning::mode_agreement_probability;
use smoothed_ftpl::pwa_env::{mode_flip_rate, Aggregation, BoundaryKind, ThresholdLoss};
use smoothed_ftpl::rng::{child_seed, stream, uniform_in};
use smoothed_ftpl::smoothing::History;
use smoothed_ftpl::space::{clamp_to_space, l1_distance, IsometryConstants};
use smoothed_ftpl::stats::parallel_mean;

use crate::config::{ConfigError, ExperimentConfig};
use crate::env::{EnvLoss, Experiment};
use crate::output::{csv_bytes, float, write_atomic};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Bracket,
    Concentration,
    Isometry,
    Modeflip,
}

pub const VERIFY_HEADER: [&str; 6] = ["check", "pass", "estimate", "bound", "ci_low", "ci_high"];

const PAIR_STREAM: u64 = 1;

struct Check {
    name: String,
    pass: bool,
    estimate: f64,
    bound: f64,
    ci: (f64, f64),
}

impl Check {
    fn row(&self) -> Vec<String> {
        vec![
            self.name.clone(),
            self.pass.to_string(),
            float(self.estimate),
            float(self.bound),
            float(self.ci.0),
            float(self.ci.1),
        ]
    }
}

fn normal_ci(mean: f64, se: f64) -> (f64, f64) {
    (mean - 1.96 * se, mean + 1.96 * se)
}

/// Parameter pairs: a uniform point and a neighbour at most `pair_scale`
/// away per coordinate, both mapped to the representation the loss uses.
fn pairs(exp: &Experiment, master: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>, Failure> {
    let v = &exp.config.verify;
    let space = exp.space();
    let mut rng = stream(master, PAIR_STREAM);
    let prepare = |p: Vec<f64>| match &exp.env {
        EnvLoss::Piecewise(pw) if pw.normalize_discrete() => pw.normalized(&p),
        _ => p,
    };
    (0..v.pairs)
        .map(|_| {
            let a = space.sample_uniform(&mut rng).into_inner();
            let b: Vec<f64> = a
                .iter()
                .map(|x| x + uniform_in(&mut rng, -v.pair_scale, v.pair_scale))
                .collect();
            let b = clamp_to_space(&b, space).map_err(|e| Failure::Runtime(e.into()))?;
            Ok((prepare(a), prepare(b.into_inner())))
        })
        .collect()
}

fn with_override(iso: IsometryConstants, alpha: Option<f64>) -> IsometryConstants {
    IsometryConstants {
        alpha: alpha.unwrap_or(iso.alpha),
        ..iso
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn isometry_checks(exp: &Experiment, master: u64) -> Result<Vec<Check>, Failure> {
    let v = &exp.config.verify;
    let iso = with_override(exp.isometry()?, v.alpha);
    let metric = exp.metric();
    let adversary = exp.adversary.as_ref();
    let mut checks = Vec::new();
    for (i, (a, b)) in pairs(exp, master)?.iter().enumerate() {
        let est = parallel_mean(v.n_mc, child_seed(master, 100 + i as u64), 0, |rng| {
            let z = adversary.draw(&History::empty(), rng);
            metric.rho(a, b, &z)
        });
        let gap = l1_distance(a, b).map_err(runtime)?;
        let bound = iso.bound(gap);
        checks.push(Check {
            name: format!("isometry pair {i} gap={gap:.3e}"),
            pass: est.mean <= bound + 3.0 * est.se,
            estimate: est.mean,
            bound,
            ci: normal_ci(est.mean, est.se),
        });
    }
    Ok(checks)
}

fn modeflip_checks(exp: &Experiment, master: u64) -> Result<Vec<Check>, Failure> {
    let v = &exp.config.verify;
    let adversary = exp.adversary.as_ref();
    let iso = exp.isometry()?;
    let mut checks = Vec::new();
    for (i, (a, b)) in pairs(exp, master)?.iter().enumerate() {
        let seed = child_seed(master, 200 + i as u64);
        let (rate, se, ci, bound) = match &exp.env {
            EnvLoss::Piecewise(pw) => {
                let spec = pw.boundary();
                let (da, db) = (pw.discrete(a), pw.discrete(b));
                let est = mode_flip_rate(spec, da, db, adversary, v.n_mc, seed).map_err(runtime)?;
                let gap = l1_distance(da, db).map_err(runtime)?;
                let constant = match (spec.kind(), spec.aggregation()) {
                    (BoundaryKind::Affine, Aggregation::Tournament) => {
                        let (lo, hi) = spec.link().slope_bounds();
                        hi * adversary.class().sup_bound / (lo * exp.sigma_dir()?)
                    }
                    // rho charges 2 per flip, so half the isometry constant bounds flips
                    _ => iso.alpha / 2.0,
                };
                let bound = v.alpha.unwrap_or(constant) * gap.powf(iso.beta);
                (est.rate, est.se, (est.ci_low, est.ci_high), bound)
            }
            EnvLoss::Threshold(_) => {
                let est = parallel_mean(v.n_mc, seed, 0, |rng| {
                    let z = adversary.draw(&History::empty(), rng);
                    let x = z.z[0];
                    f64::from(u8::from(ThresholdLoss::predict(a[0], x) != ThresholdLoss::predict(b[0], x)))
                });
                let bound = v.alpha.unwrap_or(iso.alpha / 2.0) * (a[0] - b[0]).abs();
                (est.mean, est.se, normal_ci(est.mean, est.se), bound)
            }
            EnvLoss::Planning(p) => {
                let est = mode_agreement_probability(p.spec(), a, b, adversary, v.n_mc, seed).map_err(runtime)?;
                let gap = l1_distance(a, b).map_err(runtime)?;
                let bound = v.alpha.unwrap_or(iso.alpha) * gap;
                (1.0 - est.probability, est.se, (1.0 - est.ci_high, 1.0 - est.ci_low), bound)
            }
        };
        checks.push(Check {
            name: format!("modeflip pair {i}"),
            pass: rate <= bound + 3.0 * se,
            estimate: rate,
            bound,
            ci,
        });
    }
    Ok(checks)
}

fn bracket_checks(exp: &Experiment, master: u64) -> Result<Vec<Check>, Failure> {
    let v = &exp.config.verify;
    let (recipe, params) = exp.recipe()?;
    let mut checks = Vec::new();
    for (i, &eps) in v.epsilon.iter().enumerate() {
        let field = format!("verify.epsilon[{i}]");
        let bracket = build_generalized_bracket(
            exp.space(),
            exp.config.environment.kind(),
            exp.adversary.name(),
            recipe,
            &params,
            eps,
        )
        .map_err(|e| ConfigError::field(&field, e.to_string()))?;
        if bracket.len() > BRACKET_CELL_LIMIT {
            return Err(ConfigError::field(
                &field,
                format!(
                    "bracket needs {} cells (limit {BRACKET_CELL_LIMIT}); raise epsilon or shrink the parameter box",
                    bracket.len()
                ),
            )
            .into());
        }
        let report = verify_bracket(&bracket, exp.metric(), &[exp.adversary.as_ref()], v.n_mc, child_seed(master, 300 + i as u64))
            .map_err(runtime)?;
        checks.push(Check {
            name: format!("bracket eps={eps} cells={}", report.cells),
            pass: report.pass,
            estimate: report.worst_mean,
            bound: eps,
            ci: normal_ci(report.worst_mean, report.worst_se),
        });
    }
    Ok(checks)
}

fn concentration_checks(exp: &Experiment, master: u64) -> Result<Vec<Check>, Failure> {
    let v = &exp.config.verify;
    let (recipe, params) = exp.recipe()?;
    let epsilon = v.epsilon[0];
    let bracket = build_generalized_bracket(exp.space(), exp.config.environment.kind(), exp.adversary.name(), recipe, &params, epsilon)
        .map_err(|e| ConfigError::field("verify.epsilon[0]", e.to_string()))?;
    let trial = ConcentrationTrial {
        n: v.n,
        delta: v.delta,
        epsilon,
        diameter: exp.metric().diameter_bound(),
        bracket_size: bracket.len() as f64,
        trials: v.trials,
        isometry: with_override(exp.isometry()?, v.alpha),
    };
    let pairs = pairs(exp, master)?;
    let report = check_concentration(&trial, exp.metric(), exp.adversary.as_ref(), &pairs, child_seed(master, 400))
        .map_err(|e| ConfigError::field("verify", e.to_string()))?;
    Ok(vec![Check {
        name: format!("concentration n={} delta={}", v.n, v.delta),
        pass: report.pass,
        estimate: report.violation_rate,
        bound: v.delta,
        ci: (report.ci_low, report.ci_high),
    }])
}

pub fn cmd_verify(cfg: &ExperimentConfig, which: Which, out: &Path, master: u64) -> Result<PathBuf, Failure> {
    let exp = Experiment::build(cfg)?;
    let (label, checks) = match which {
        Which::Bracket => ("bracket", bracket_checks(&exp, master)?),
        Which::Concentration => ("concentration", concentration_checks(&exp, master)?),
        Which::Isometry => ("isometry", isometry_checks(&exp, master)?),
        Which::Modeflip => ("modeflip", modeflip_checks(&exp, master)?),
    };
    let rows: Vec<Vec<String>> = checks.iter().map(Check::row).collect();
    let path = out.join(format!("verify_{label}.csv"));
    write_atomic(&path, &csv_bytes(&VERIFY_HEADER, &rows).map_err(Failure::Runtime)?).map_err(Failure::Runtime)?;
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.pass).collect();
    for c in &checks {
        eprintln!(
            "{} {}: estimate {:.4e}, bound {:.4e}",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.estimate,
            c.bound
        );
    }
    if failed.is_empty() {
        Ok(path)
    } else {
        Err(Failure::ChecksFailed {
            failed: failed.len(),
            total: checks.len(),
            report: path,
        })
    }
}
