//! Run records and the measurements taken on them.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ftpl::HyperParams;
use crate::oracle::{best_in_hindsight, ErmProblem, ErmSolver, Suboptimality};
use crate::perturbation::PerturbationDraw;
use crate::rng::{stream, ANALYSIS_STREAM, SOLVER_STREAM_BASE};
use crate::smoothing::{sample_context, AdversaryStrategy, History};
use crate::space::{l1_unchecked, Context, IsometryConstants, Loss, ParamPoint, ParamSpace, PseudoMetric};
use crate::stats::{wilson_interval, MeanEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub epoch: usize,
    pub digest: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSummary {
    pub kind: String,
    pub eta: f64,
    /// The exponential vector; empty for Gaussian-process draws.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub xi: Vec<f64>,
    /// Number of anchors of a Gaussian-process draw.
    #[serde(default)]
    pub anchors: usize,
}

impl From<&PerturbationDraw> for PerturbationSummary {
    fn from(draw: &PerturbationDraw) -> Self {
        match draw {
            PerturbationDraw::LinearExponential { eta, xi } => Self {
                kind: draw.kind().into(),
                eta: *eta,
                xi: xi.clone(),
                anchors: 0,
            },
            PerturbationDraw::GaussianProcess { eta, anchors, .. } => Self {
                kind: draw.kind().into(),
                eta: *eta,
                xi: Vec::new(),
                anchors: anchors.len(),
            },
        }
    }
}

impl PerturbationSummary {
    /// Rebuilds a linear draw; Gaussian-process draws are not stored in full.
    pub fn linear_draw(&self) -> Option<PerturbationDraw> {
        (!self.xi.is_empty()).then(|| PerturbationDraw::LinearExponential {
            eta: self.eta,
            xi: self.xi.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub theta: ParamPoint,
    pub perturbation: PerturbationSummary,
    pub objective: f64,
    pub suboptimality: Suboptimality,
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub horizon: usize,
    pub hyper: HyperParams,
    pub oracle_calls: usize,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// The realized context stream, needed to replay the hindsight optimum.
    pub contexts: Vec<Context>,
}

impl RunRecord {
    pub fn new(seed: u64, horizon: usize, hyper: HyperParams) -> Self {
        Self {
            seed,
            horizon,
            hyper,
            oracle_calls: 0,
            valid: true,
            error: None,
            warnings: Vec::new(),
            epochs: Vec::new(),
            steps: Vec::new(),
            contexts: Vec::new(),
        }
    }

    pub fn cumulative_loss(&self) -> f64 {
        self.steps.iter().map(|s| s.loss).sum()
    }

    /// The parameter played at round `t` (1-based).
    pub fn played(&self, t: usize) -> Option<&ParamPoint> {
        let step = self.steps.get(t.checked_sub(1)?)?;
        self.epochs.get(step.epoch - 1).map(|e| &e.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub regret: f64,
    pub avg_regret: f64,
    pub learner_loss: f64,
    pub hindsight_loss: f64,
    pub hindsight_theta: ParamPoint,
    pub hindsight_suboptimality: Suboptimality,
}

/// Learner loss minus the hindsight optimum on the realized stream.
pub fn compute_regret(
    run: &RunRecord,
    loss: &dyn Loss,
    space: &ParamSpace,
    solver: &dyn ErmSolver,
) -> Result<RegretReport> {
    if !run.valid {
        return Err(invalid(
            "run",
            format!("record is invalid: {}", run.error.as_deref().unwrap_or("unknown")),
        ));
    }
    let mut rng = stream(run.seed, ANALYSIS_STREAM);
    let best = best_in_hindsight(&run.contexts, loss, space, solver, &mut rng)?;
    let learner_loss = run.cumulative_loss();
    let hindsight_loss = best.objective;
    let regret = learner_loss - hindsight_loss;
    Ok(RegretReport {
        regret,
        avg_regret: regret / run.horizon as f64,
        learner_loss,
        hindsight_loss,
        hindsight_theta: best.theta,
        hindsight_suboptimality: best.suboptimality,
    })
}

/// `|theta_tau - theta_{tau+1}|_1` between consecutive played epochs.
pub fn stability_trace(run: &RunRecord) -> Vec<f64> {
    run.epochs
        .windows(2)
        .map(|w| l1_unchecked(&w[0].theta, &w[1].theta))
        .collect()
}

pub fn mean_stability(run: &RunRecord) -> f64 {
    let trace = stability_trace(run);
    if trace.is_empty() {
        return f64::NAN;
    }
    trace.iter().sum::<f64>() / trace.len() as f64
}

/// Stability under a shared draw: for each epoch `tau` with a successor,
/// re-solve with epoch `tau`'s perturbation on the data through epoch `tau`
/// and compare with the played `theta_tau`. Needs linear draws.
pub fn coupled_stability_trace(
    run: &RunRecord,
    loss: &dyn Loss,
    space: &ParamSpace,
    solver: &dyn ErmSolver,
) -> Result<Vec<f64>> {
    let mut end = 0;
    let mut gaps = Vec::new();
    for (i, epoch) in run.epochs.iter().enumerate() {
        end += run.steps.iter().filter(|s| s.epoch == epoch.epoch).count();
        if i + 1 == run.epochs.len() {
            break;
        }
        let draw = epoch.perturbation.linear_draw().ok_or_else(|| {
            Error::Unsupported("coupled stability needs linear perturbation draws".into())
        })?;
        let problem = ErmProblem::new(&run.contexts[..end], loss, Some(&draw), space)?;
        let mut rng = stream(run.seed, SOLVER_STREAM_BASE + epoch.epoch as u64 + 1);
        let next = solver.solve(&problem, &mut rng)?;
        gaps.push(l1_unchecked(&epoch.theta, &next.theta));
    }
    Ok(gaps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    Affine,
    Polynomial,
    Margin,
    Planning,
}

pub const SUPPORTED_RECIPES: [&str; 4] = ["affine", "polynomial", "margin", "planning"];

impl FromStr for RecipeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(RecipeKind::Affine),
            "polynomial" => Ok(RecipeKind::Polynomial),
            "margin" => Ok(RecipeKind::Margin),
            "planning" => Ok(RecipeKind::Planning),
            other => Err(invalid(
                "recipe",
                format!(
                    "unknown recipe {other:?}; supported: {}",
                    SUPPORTED_RECIPES.join(", ")
                ),
            )),
        }
    }
}

impl RecipeKind {
    pub fn name(&self) -> &'static str {
        match self {
            RecipeKind::Affine => "affine",
            RecipeKind::Polynomial => "polynomial",
            RecipeKind::Margin => "margin",
            RecipeKind::Planning => "planning",
        }
    }
}

/// Constants entering the bracket radius. `sigma` is `sigma_dir` except for
/// the polynomial recipe, where it is `sigma_poly`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecipeParams {
    pub modes: usize,
    pub a: f64,
    pub big_a: f64,
    pub b: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub degree: u32,
    pub horizon: usize,
    pub diameter: f64,
    pub lipschitz: f64,
}

impl Default for RecipeParams {
    fn default() -> Self {
        Self {
            modes: 1,
            a: 1.0,
            big_a: 1.0,
            b: 1.0,
            sigma: 1.0,
            gamma: 1.0,
            degree: 1,
            horizon: 1,
            diameter: 1.0,
            lipschitz: 1.0,
        }
    }
}

/// The cell radius `eps~` that makes a mesh an `epsilon`-bracket.
pub fn bracket_radius(recipe: RecipeKind, p: &RecipeParams, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("{epsilon} must be positive")));
    }
    let k2 = (p.modes as f64).powi(2);
    let r = match recipe {
        RecipeKind::Affine => p.a * p.sigma * epsilon / (3.0 * k2 * p.big_a * p.b),
        RecipeKind::Polynomial => (p.sigma * epsilon / (3.0 * k2 * p.b)).powi(p.degree as i32),
        RecipeKind::Margin => p.a * p.gamma * p.sigma * epsilon / (6.0 * k2 * p.big_a * p.b),
        RecipeKind::Planning => {
            let h = p.horizon as f64;
            p.gamma * p.sigma * epsilon / (12.0 * p.diameter * h * h * p.lipschitz)
        }
    };
    if !(r > 0.0) || !r.is_finite() {
        return Err(invalid("recipe", format!("parameters give radius {r}")));
    }
    Ok(r)
}

/// A mesh of axis-aligned cells of half-width at most `radius` covering the
/// parameter box. Cells are enumerated lazily in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedBracket {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
    pub radius: f64,
    pub epsilon: f64,
    pub recipe: RecipeKind,
    pub metric: String,
    pub class: String,
}

impl GeneralizedBracket {
    /// Number of cells; saturates at `u64::MAX`.
    pub fn len(&self) -> u64 {
        self.counts
            .iter()
            .try_fold(1u64, |acc, c| acc.checked_mul(*c as u64))
            .unwrap_or(u64::MAX)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn digits(&self, mut index: u64) -> Vec<usize> {
        let mut out = vec![0; self.counts.len()];
        for j in (0..self.counts.len()).rev() {
            out[j] = (index % self.counts[j] as u64) as usize;
            index /= self.counts[j] as u64;
        }
        out
    }

    /// Bounds of cell `index`.
    pub fn cell(&self, index: u64) -> (Vec<f64>, Vec<f64>) {
        let digits = self.digits(index);
        let mut lo = Vec::with_capacity(digits.len());
        let mut hi = Vec::with_capacity(digits.len());
        for (j, c) in digits.iter().enumerate() {
            let w = (self.upper[j] - self.lower[j]) / self.counts[j] as f64;
            lo.push(self.lower[j] + *c as f64 * w);
            hi.push(if *c + 1 == self.counts[j] {
                self.upper[j]
            } else {
                self.lower[j] + (*c + 1) as f64 * w
            });
        }
        (lo, hi)
    }

    pub fn center(&self, index: u64) -> Vec<f64> {
        let digits = self.digits(index);
        digits
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let w = (self.upper[j] - self.lower[j]) / self.counts[j] as f64;
                self.lower[j] + (*c as f64 + 0.5) * w
            })
            .collect()
    }

    /// Index of a cell containing `theta`.
    pub fn locate(&self, theta: &[f64]) -> u64 {
        let mut index = 0u64;
        for (j, x) in theta.iter().enumerate() {
            let range = self.upper[j] - self.lower[j];
            let c = if range > 0.0 {
                (((x - self.lower[j]) / range * self.counts[j] as f64).floor() as i64)
                    .clamp(0, self.counts[j] as i64 - 1) as u64
            } else {
                0
            };
            index = index * self.counts[j] as u64 + c;
        }
        index
    }
}

/// Mesh bracket for `space` with the recipe's radius.
pub fn build_generalized_bracket(
    space: &ParamSpace,
    metric: &str,
    class: &str,
    recipe: RecipeKind,
    params: &RecipeParams,
    epsilon: f64,
) -> Result<GeneralizedBracket> {
    let radius = bracket_radius(recipe, params, epsilon)?;
    let counts = space
        .lower()
        .iter()
        .zip(space.upper())
        .map(|(lo, hi)| (((hi - lo) / (2.0 * radius)).ceil() as usize).max(1))
        .collect();
    Ok(GeneralizedBracket {
        lower: space.lower().to_vec(),
        upper: space.upper().to_vec(),
        counts,
        radius,
        epsilon,
        recipe,
        metric: metric.into(),
        class: class.into(),
    })
}

pub const BRACKET_CELL_LIMIT: u64 = 1_000_000;
pub const RANDOM_PROBES: usize = 32;
const MAX_CORNER_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketReport {
    /// True iff every cell passes against every battery member.
    pub pass: bool,
    pub cells: u64,
    pub worst_cell: u64,
    pub worst_adversary: String,
    pub worst_mean: f64,
    pub worst_se: f64,
    pub epsilon: f64,
    /// Names of the strategies the bracket was checked against.
    pub battery: Vec<String>,
}

fn probes(lo: &[f64], hi: &[f64], seed: u64, cell: u64) -> Vec<Vec<f64>> {
    let dim = lo.len();
    let mut out = Vec::new();
    if dim <= MAX_CORNER_DIM {
        for mask in 0u64..(1 << dim) {
            out.push(
                (0..dim)
                    .map(|j| if mask >> j & 1 == 1 { hi[j] } else { lo[j] })
                    .collect(),
            );
        }
    } else {
        for j in 0..dim {
            for end in [lo[j], hi[j]] {
                let mut p: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
                p[j] = end;
                out.push(p);
            }
        }
    }
    let mut rng = stream(seed, ANALYSIS_STREAM + (1 << 31) + cell);
    for _ in 0..RANDOM_PROBES {
        out.push(
            lo.iter()
                .zip(hi)
                .map(|(a, b)| crate::rng::uniform_in(&mut rng, *a, *b))
                .collect(),
        );
    }
    out
}

/// Checks `E_nu[sup_{theta in B_i} rho(theta, theta_i, z)] <= epsilon` for
/// every cell and every strategy of the battery, estimating the inner sup
/// with cell corners plus random interior probes. A cell passes when the
/// estimate is within `epsilon + 3 SE`.
pub fn verify_bracket(
    bracket: &GeneralizedBracket,
    metric: &dyn PseudoMetric,
    battery: &[&dyn AdversaryStrategy],
    n_mc: usize,
    seed: u64,
) -> Result<BracketReport> {
    let cells = bracket.len();
    if cells > BRACKET_CELL_LIMIT {
        return Err(Error::GridTooLarge {
            points: cells as f64,
            limit: BRACKET_CELL_LIMIT as f64,
        });
    }
    if battery.is_empty() {
        return Err(invalid("battery", "needs at least one strategy"));
    }
    let samples: Vec<Vec<Context>> = battery
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let mut rng = stream(seed, ANALYSIS_STREAM + j as u64);
            (0..n_mc)
                .map(|_| sample_context(*s, &History::empty(), &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let per_cell: Vec<(u64, usize, MeanEstimate, bool)> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = bracket.cell(i);
            let center = bracket.center(i);
            let probes = probes(&lo, &hi, seed, i);
            let mut worst = (0, MeanEstimate::from_values(&[]), true);
            for (j, zs) in samples.iter().enumerate() {
                let values: Vec<f64> = zs
                    .iter()
                    .map(|z| {
                        probes
                            .iter()
                            .map(|p| metric.rho(p, &center, z))
                            .fold(0.0, f64::max)
                    })
                    .collect();
                let est = MeanEstimate::from_values(&values);
                let ok = est.mean <= bracket.epsilon + 3.0 * est.se;
                if j == 0 || est.mean > worst.1.mean {
                    worst = (j, est, worst.2 && ok);
                } else {
                    worst.2 &= ok;
                }
            }
            (i, worst.0, worst.1, worst.2)
        })
        .collect();

    let pass = per_cell.iter().all(|c| c.3);
    let (worst_cell, worst_adv, worst_est, _) = per_cell
        .iter()
        .max_by(|a, b| a.2.mean.total_cmp(&b.2.mean).then(b.0.cmp(&a.0)))
        .copied()
        .expect("at least one cell");
    Ok(BracketReport {
        pass,
        cells,
        worst_cell,
        worst_adversary: battery[worst_adv].name().into(),
        worst_mean: worst_est.mean,
        worst_se: worst_est.se,
        epsilon: bracket.epsilon,
        battery: battery.iter().map(|s| s.name().to_string()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationTrial {
    pub n: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// `D_rho`.
    pub diameter: f64,
    /// Bracket size `N` inside the log term.
    pub bracket_size: f64,
    pub trials: usize,
    /// Surrogate for `sup_nu E[rho]`, capped at `D_rho`.
    pub isometry: IsometryConstants,
}

impl ConcentrationTrial {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("{} not in (0, 1)", self.delta)));
        }
        if !(self.epsilon >= 0.0) || !(self.diameter > 0.0) || !(self.bracket_size >= 1.0) {
            return Err(invalid(
                "trial",
                "need epsilon >= 0, diameter > 0 and bracket_size >= 1",
            ));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        Ok(())
    }

    /// `4 n sup E[rho] + 8 eps n + 6 D^2 log(2N / delta)`.
    pub fn bound(&self, l1_gap: f64) -> f64 {
        let n = self.n as f64;
        let mean_rho = self.isometry.bound(l1_gap).min(self.diameter);
        4.0 * n * mean_rho
            + 8.0 * self.epsilon * n
            + 6.0 * self.diameter.powi(2) * (2.0 * self.bracket_size / self.delta).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub violation_rate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub violations: usize,
    pub trials: usize,
    /// Largest `|sum rho| / bound` seen over all trials and pairs.
    pub max_ratio: f64,
    pub pass: bool,
}

/// Fraction of trials in which some probed pair has `|sum_i rho| > bound`,
/// with `n` contexts per trial drawn sequentially from `adversary`.
pub fn check_concentration(
    trial: &ConcentrationTrial,
    metric: &dyn PseudoMetric,
    adversary: &dyn AdversaryStrategy,
    pairs: &[(Vec<f64>, Vec<f64>)],
    seed: u64,
) -> Result<ConcentrationReport> {
    trial.validate()?;
    let bounds: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| trial.bound(l1_unchecked(a, b)))
        .collect();
    let outcomes: Vec<(bool, f64)> = (0..trial.trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, ANALYSIS_STREAM + k as u64);
            let mut contexts = Vec::with_capacity(trial.n);
            for _ in 0..trial.n {
                let z = sample_context(adversary, &History::new(&contexts, &[]), &mut rng)?;
                contexts.push(z);
            }
            let mut violated = false;
            let mut ratio: f64 = 0.0;
            for ((a, b), bound) in pairs.iter().zip(&bounds) {
                let lhs = contexts.iter().map(|z| metric.rho(a, b, z)).sum::<f64>().abs();
                violated |= lhs > *bound;
                ratio = ratio.max(lhs / bound);
            }
            Ok((violated, ratio))
        })
        .collect::<Result<_>>()?;
    let violations = outcomes.iter().filter(|o| o.0).count();
    let p = violations as f64 / trial.trials as f64;
    let se = (p * (1.0 - p) / trial.trials as f64).sqrt();
    let (ci_low, ci_high) = wilson_interval(violations as u64, trial.trials as u64, 1.96);
    Ok(ConcentrationReport {
        violation_rate: p,
        se,
        ci_low,
        ci_high,
        violations,
        trials: trial.trials,
        max_ratio: outcomes.iter().map(|o| o.1).fold(0.0, f64::max),
        pass: p <= trial.delta + 3.0 * se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    /// Standard error of the slope; NaN with only two points.
    pub se: f64,
    pub intercept: f64,
    pub used: usize,
    /// Points dropped for nonpositive regret.
    pub dropped: usize,
}

/// Least-squares slope of `log regret` against `log T`.
pub fn fit_regret_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, r)| *t > 0.0 && *r > 0.0)
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    let dropped = points.len() - usable.len();
    if usable.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} usable points, need at least 2",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all horizons are equal".into()));
    }
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if usable.len() > 2 {
        let sse: f64 = usable
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(ExponentFit {
        slope,
        se,
        intercept,
        used: usable.len(),
        dropped,
    })
}

/// Average regrets (one per seed) at a given oracle budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub oracle_calls: usize,
    pub avg_regrets: Vec<f64>,
}

/// Smallest recorded oracle budget whose mean average regret is at most
/// `epsilon`. Average regret never exceeds 1, so `epsilon >= 1` needs one call.
pub fn oracle_complexity(series: &[ComplexityPoint], epsilon: f64) -> Option<usize> {
    if epsilon >= 1.0 {
        return Some(1);
    }
    series
        .iter()
        .filter(|p| {
            !p.avg_regrets.is_empty()
                && p.avg_regrets.iter().sum::<f64>() / p.avg_regrets.len() as f64 <= epsilon
        })
        .map(|p| p.oracle_calls)
        .min()
}
