//! ERM oracles for perturbed cumulative losses.
//!
//! Ties are broken toward the lexicographically smallest candidate: the
//! leftmost cell for the exact threshold solver, the smallest grid index for
//! the grid solver, and `(objective, theta)` order across restarts.

use std::cmp::Ordering;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::PerturbationDraw;
use crate::pwa_env::PiecewiseLoss;
use crate::rng::{stream, StreamRng};
use crate::space::{Context, Loss, ParamPoint, ParamSpace};

pub const GRID_LIMIT: f64 = 1e7;

pub struct ErmProblem<'a> {
    pub data: &'a [Context],
    pub loss: &'a dyn Loss,
    pub perturbation: Option<&'a PerturbationDraw>,
    pub space: &'a ParamSpace,
}

impl<'a> ErmProblem<'a> {
    pub fn new(
        data: &'a [Context],
        loss: &'a dyn Loss,
        perturbation: Option<&'a PerturbationDraw>,
        space: &'a ParamSpace,
    ) -> Result<Self> {
        if loss.param_dim() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                actual: loss.param_dim(),
            });
        }
        if let Some(z) = data.iter().find(|z| z.z.len() != loss.context_dim()) {
            return Err(Error::DimensionMismatch {
                expected: loss.context_dim(),
                actual: z.z.len(),
            });
        }
        if let Some(p) = perturbation {
            // surfaces dimension or kind mismatches once, up front
            p.eval_for(loss, &space.center())?;
        }
        Ok(Self {
            data,
            loss,
            perturbation,
            space,
        })
    }

    pub fn cumulative_loss(&self, theta: &[f64]) -> f64 {
        self.data
            .iter()
            .fold(0.0, |acc, z| acc + self.loss.eval(theta, z))
    }

    pub fn perturbation_term(&self, theta: &[f64]) -> f64 {
        match self.perturbation {
            // validated in `new`
            Some(p) => p.eval_for(self.loss, theta).unwrap_or(0.0),
            None => 0.0,
        }
    }

    /// `sum_i l(theta, z_i) + omega(theta)`.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.cumulative_loss(theta) + self.perturbation_term(theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Suboptimality {
    Exact,
    /// Gap to a grid baseline over the same problem.
    Certified { gamma: f64 },
    /// Grid minimum; the true infimum may lie between grid points.
    GridResolution { mesh: usize, cell_width: f64 },
    Uncertified,
}

impl Suboptimality {
    /// The numeric gap when one is certified (0 for exact solvers).
    pub fn gamma(&self) -> Option<f64> {
        match self {
            Suboptimality::Exact => Some(0.0),
            Suboptimality::Certified { gamma } => Some(*gamma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub theta: ParamPoint,
    pub objective: f64,
    pub suboptimality: Suboptimality,
    pub solver_id: String,
    pub evaluations: u64,
    /// Objective after each iteration (iterative solvers only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

pub trait ErmSolver: Send + Sync {
    fn id(&self) -> &str;

    fn solve(&self, problem: &ErmProblem<'_>, rng: &mut StreamRng) -> Result<OracleResult>;
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn objective_cmp(a: f64, b: f64) -> Ordering {
    let canon = |x: f64| if x.is_nan() { f64::INFINITY } else { x + 0.0 };
    canon(a).total_cmp(&canon(b))
}

/// Exact minimizer for the 1-D threshold loss with an optional linear
/// exponential perturbation. The count of mistakes is constant on the cells
/// `[lo, b_1], (b_1, b_2], ..., (b_m, hi]` where `b_j` are the distinct data
/// points in `[lo, hi)`; on each cell the objective is minimized at the
/// midpoint (unperturbed) or the right endpoint (positive linear tilt).
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactThreshold;

impl ErmSolver for ExactThreshold {
    fn id(&self) -> &str {
        "exact_threshold"
    }

    fn solve(&self, problem: &ErmProblem<'_>, _rng: &mut StreamRng) -> Result<OracleResult> {
        if problem.loss.as_threshold().is_none() {
            return Err(Error::Unsupported(
                "the exact threshold solver needs a threshold loss".into(),
            ));
        }
        let tilt = match problem.perturbation {
            None => 0.0,
            Some(PerturbationDraw::LinearExponential { eta, xi }) => eta * xi[0],
            Some(PerturbationDraw::GaussianProcess { .. }) => {
                return Err(Error::Unsupported(
                    "the exact threshold solver handles linear perturbations only".into(),
                ))
            }
        };
        let lo = problem.space.lower()[0];
        let hi = problem.space.upper()[0];

        let theta = if problem.data.is_empty() {
            if tilt > 0.0 {
                hi
            } else {
                lo
            }
        } else {
            let mut pts: Vec<(f64, bool)> = problem
                .data
                .iter()
                .map(|z| (z.z[0], z.y() >= 0.0))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            // mistakes at theta = lo: predict +1 iff x >= lo
            let mut count: i64 = pts
                .iter()
                .filter(|(x, pos)| (*x >= lo) != *pos)
                .count() as i64;
            let mut best_theta = f64::NAN;
            let mut best_val = f64::INFINITY;
            let mut consider = |left: f64, right: f64, count: i64| {
                let (theta, val) = if tilt > 0.0 {
                    (right, count as f64 - tilt * right)
                } else {
                    (0.5 * (left + right), count as f64)
                };
                if val < best_val {
                    best_val = val;
                    best_theta = theta;
                }
            };
            let mut left = lo;
            let mut i = pts.partition_point(|p| p.0 < lo);
            while i < pts.len() && pts[i].0 < hi {
                let b = pts[i].0;
                consider(left, b, count);
                // theta moves past b: points at b switch from +1 to -1
                while i < pts.len() && pts[i].0 == b {
                    count += if pts[i].1 { 1 } else { -1 };
                    i += 1;
                }
                left = b;
            }
            consider(left, hi, count);
            best_theta
        };
        let theta = vec![theta];
        Ok(OracleResult {
            objective: problem.objective(&theta),
            theta: ParamPoint(theta),
            suboptimality: Suboptimality::Exact,
            solver_id: self.id().into(),
            evaluations: problem.data.len() as u64,
            trace: Vec::new(),
        })
    }
}

/// Exhaustive search over `mesh` evenly spaced values per coordinate
/// (endpoints included).
#[derive(Debug, Clone)]
pub struct GridSolver {
    pub mesh: usize,
    cache: Option<Arc<Mutex<GridCache>>>,
}

/// Per-point cumulative losses for the last data set seen. A later problem
/// whose data extends that set (same loss, same box) only pays for the new
/// contexts.
#[derive(Debug, Default)]
struct GridCache {
    loss: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    seen: Vec<Context>,
    sums: Vec<f64>,
}

impl GridCache {
    fn extends(&self, problem: &ErmProblem<'_>, loss: usize, total: usize) -> bool {
        self.loss == loss
            && self.sums.len() == total
            && self.lower == problem.space.lower()
            && self.upper == problem.space.upper()
            && problem.data.len() >= self.seen.len()
            && problem.data[..self.seen.len()] == self.seen[..]
    }
}

impl GridSolver {
    pub fn new(mesh: usize) -> Self {
        Self { mesh, cache: None }
    }

    /// A solver that reuses cumulative sums across calls whose data grows
    /// by appending, as in successive epochs of one run. Results are
    /// bitwise identical to [`GridSolver::new`]. Clones share the cache, so
    /// give each concurrent run its own solver.
    pub fn cached(mesh: usize) -> Self {
        Self {
            mesh,
            cache: Some(Arc::new(Mutex::new(GridCache::default()))),
        }
    }

    fn axes(&self, space: &ParamSpace) -> Vec<Vec<f64>> {
        space
            .lower()
            .iter()
            .zip(space.upper())
            .map(|(lo, hi)| {
                if self.mesh == 1 {
                    vec![*lo]
                } else {
                    let denom = (self.mesh - 1) as f64;
                    (0..self.mesh)
                        .map(|i| lo + (hi - lo) * (i as f64 / denom))
                        .collect()
                }
            })
            .collect()
    }
}

impl ErmSolver for GridSolver {
    fn id(&self) -> &str {
        "grid"
    }

    fn solve(&self, problem: &ErmProblem<'_>, _rng: &mut StreamRng) -> Result<OracleResult> {
        if self.mesh == 0 {
            return Err(crate::error::invalid("mesh", "must be at least 1"));
        }
        let dim = problem.space.dim();
        let points = (self.mesh as f64).powi(dim as i32);
        if points > GRID_LIMIT {
            return Err(Error::GridTooLarge {
                points,
                limit: GRID_LIMIT,
            });
        }
        let total = points as usize;
        let axes = self.axes(problem.space);
        let decode = |mut idx: usize| -> Vec<f64> {
            let mut theta = vec![0.0; dim];
            for j in (0..dim).rev() {
                theta[j] = axes[j][idx % self.mesh];
                idx /= self.mesh;
            }
            theta
        };
        let objectives: Vec<f64> = match &self.cache {
            None => (0..total)
                .into_par_iter()
                .map(|idx| problem.objective(&decode(idx)))
                .collect(),
            Some(cache) => {
                let mut cache = cache.lock().unwrap_or_else(|e| e.into_inner());
                let loss = problem.loss as *const dyn Loss as *const () as usize;
                if !cache.extends(problem, loss, total) {
                    *cache = GridCache {
                        loss,
                        lower: problem.space.lower().to_vec(),
                        upper: problem.space.upper().to_vec(),
                        seen: Vec::new(),
                        sums: vec![0.0; total],
                    };
                }
                let fresh = &problem.data[cache.seen.len()..];
                if !fresh.is_empty() {
                    cache.sums.par_iter_mut().enumerate().for_each(|(idx, sum)| {
                        let theta = decode(idx);
                        for z in fresh {
                            *sum += problem.loss.eval(&theta, z);
                        }
                    });
                    cache.seen.extend_from_slice(fresh);
                }
                cache
                    .sums
                    .par_iter()
                    .enumerate()
                    .map(|(idx, sum)| sum + problem.perturbation_term(&decode(idx)))
                    .collect()
            }
        };
        let (best_val, best_idx) = objectives
            .into_par_iter()
            .enumerate()
            .map(|(idx, v)| (v, idx))
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| match objective_cmp(a.0, b.0) {
                    Ordering::Less => a,
                    Ordering::Greater => b,
                    Ordering::Equal => {
                        if a.1 <= b.1 {
                            a
                        } else {
                            b
                        }
                    }
                },
            );
        let cell_width = if self.mesh > 1 {
            problem
                .space
                .lower()
                .iter()
                .zip(problem.space.upper())
                .map(|(lo, hi)| (hi - lo) / (self.mesh - 1) as f64)
                .fold(0.0, f64::max)
        } else {
            problem.space.l1_diameter()
        };
        Ok(OracleResult {
            theta: ParamPoint(decode(best_idx)),
            objective: best_val,
            suboptimality: Suboptimality::GridResolution {
                mesh: self.mesh,
                cell_width,
            },
            solver_id: self.id().into(),
            evaluations: total as u64,
            trace: Vec::new(),
        })
    }
}

/// Heuristic for piecewise losses: alternate mode assignment, continuous
/// refits (least squares where available, then per-coordinate line search),
/// and local search on the boundary weights over a shrinking step. Every
/// accepted move strictly decreases the objective.
#[derive(Debug, Clone, Copy)]
pub struct AlternatingSolver {
    pub restarts: usize,
    pub max_iters: usize,
    /// Points per coordinate in the continuous line search.
    pub line_mesh: usize,
    /// When set and feasible, a grid of this mesh certifies the gap.
    pub certify_mesh: Option<usize>,
}

impl Default for AlternatingSolver {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iters: 50,
            line_mesh: 21,
            certify_mesh: None,
        }
    }
}

struct RestartOutcome {
    theta: Vec<f64>,
    objective: f64,
    evaluations: u64,
    trace: Vec<f64>,
}

impl AlternatingSolver {
    fn run_restart(
        &self,
        problem: &ErmProblem<'_>,
        pw: &PiecewiseLoss,
        restart: usize,
        seed: u64,
    ) -> RestartOutcome {
        let space = problem.space;
        let dim = space.dim();
        let dim_c = space.dim_continuous();
        let mut rng = stream(seed, 0);
        let mut evaluations = 0u64;
        let mut f = |theta: &[f64]| {
            evaluations += 1;
            problem.objective(theta)
        };
        let prepare = |theta: Vec<f64>| {
            if pw.normalize_discrete() {
                pw.normalized(&theta)
            } else {
                theta
            }
        };
        let start = if restart == 0 {
            space.center().into_inner()
        } else {
            space.sample_uniform(&mut rng).into_inner()
        };
        let mut theta = prepare(start);
        let mut obj = f(&theta);
        let mut trace = vec![obj];
        let range = |j: usize| space.upper()[j] - space.lower()[j];
        let mut step_d = (dim_c..dim).map(range).fold(0.0, f64::max) / 4.0;
        let mut step_c = (0..dim_c).map(range).fold(0.0, f64::max) / 4.0;
        let lin: Option<Vec<f64>> = match problem.perturbation {
            Some(PerturbationDraw::LinearExponential { eta, xi }) => {
                Some(xi.iter().map(|x| eta * x).collect())
            }
            _ => None,
        };

        for _ in 0..self.max_iters {
            let before = obj;

            // mode assignment, then a least-squares refit per mode
            let modes: Vec<usize> = problem.data.iter().map(|z| pw.mode(&theta, z)).collect();
            for (k, mode_loss) in pw.mode_losses().iter().enumerate() {
                let members: Vec<&Context> = problem
                    .data
                    .iter()
                    .zip(&modes)
                    .filter(|(_, m)| **m == k)
                    .map(|(z, _)| z)
                    .collect();
                let r = pw.block_range(k);
                let block_lin = lin.as_ref().map(|l| &l[r.clone()]);
                if members.is_empty() {
                    continue;
                }
                if let Some(w) = mode_loss.least_squares(&members, block_lin) {
                    let mut cand = theta.clone();
                    for (i, v) in r.clone().zip(w) {
                        cand[i] = v.clamp(space.lower()[i], space.upper()[i]);
                    }
                    let val = f(&cand);
                    if val < obj {
                        theta = cand;
                        obj = val;
                    }
                }
            }

            // continuous coordinates: global mesh plus a local bracket
            for j in 0..dim_c {
                let (lo, hi) = (space.lower()[j], space.upper()[j]);
                let mut candidates: Vec<f64> = if self.line_mesh > 1 {
                    (0..self.line_mesh)
                        .map(|i| lo + (hi - lo) * (i as f64 / (self.line_mesh - 1) as f64))
                        .collect()
                } else {
                    Vec::new()
                };
                for s in [-1.0, -0.5, 0.5, 1.0] {
                    candidates.push((theta[j] + s * step_c).clamp(lo, hi));
                }
                for v in candidates {
                    if v == theta[j] {
                        continue;
                    }
                    let mut cand = theta.clone();
                    cand[j] = v;
                    let val = f(&cand);
                    if val < obj {
                        theta = cand;
                        obj = val;
                    }
                }
            }

            // boundary weights: signed steps on each coordinate
            for j in dim_c..dim {
                for s in [step_d, -step_d] {
                    let mut cand = theta.clone();
                    cand[j] = (cand[j] + s).clamp(space.lower()[j], space.upper()[j]);
                    let cand = prepare(cand);
                    let val = f(&cand);
                    if val < obj {
                        theta = cand;
                        obj = val;
                    }
                }
            }

            debug_assert!(obj <= before);
            trace.push(obj);
            step_d *= 0.5;
            step_c *= 0.5;
            if obj == before && step_d < 1e-9 && step_c < 1e-9 {
                break;
            }
        }
        RestartOutcome {
            theta,
            objective: obj,
            evaluations,
            trace,
        }
    }
}

impl ErmSolver for AlternatingSolver {
    fn id(&self) -> &str {
        "alternating"
    }

    fn solve(&self, problem: &ErmProblem<'_>, rng: &mut StreamRng) -> Result<OracleResult> {
        let pw = problem.loss.as_piecewise().ok_or_else(|| {
            Error::Unsupported("the alternating solver needs a piecewise loss".into())
        })?;
        let restarts = self.restarts.max(1);
        let seeds: Vec<u64> = (0..restarts).map(|_| rng.random()).collect();
        let outcomes: Vec<RestartOutcome> = seeds
            .par_iter()
            .enumerate()
            .map(|(r, s)| self.run_restart(problem, pw, r, *s))
            .collect();
        let evaluations = outcomes.iter().map(|o| o.evaluations).sum();
        let best = outcomes
            .into_iter()
            .min_by(|a, b| {
                objective_cmp(a.objective, b.objective).then_with(|| lex_cmp(&a.theta, &b.theta))
            })
            .expect("at least one restart");
        let suboptimality = match self.certify_mesh {
            Some(mesh) => match GridSolver::new(mesh).solve(problem, rng) {
                Ok(grid) => Suboptimality::Certified {
                    gamma: (best.objective - grid.objective).max(0.0),
                },
                Err(Error::GridTooLarge { .. }) => Suboptimality::Uncertified,
                Err(e) => return Err(e),
            },
            None => Suboptimality::Uncertified,
        };
        Ok(OracleResult {
            theta: ParamPoint(best.theta),
            objective: best.objective,
            suboptimality,
            solver_id: self.id().into(),
            evaluations,
            trace: best.trace,
        })
    }
}

/// `inf_theta sum_t l(theta, z_t)` via `solver`, with no perturbation.
pub fn best_in_hindsight(
    data: &[Context],
    loss: &dyn Loss,
    space: &ParamSpace,
    solver: &dyn ErmSolver,
    rng: &mut StreamRng,
) -> Result<OracleResult> {
    let problem = ErmProblem::new(data, loss, None, space)?;
    solver.solve(&problem, rng)
}
