//! Open-loop planning through piecewise dynamics.
//!
//! A context packs one episode's randomness as `[x_1, xi_1..xi_H, eta_1..eta_H]`:
//! the initial state, the input noises and the process noises. A plan
//! `theta = (u_1, ..., u_H)` is played as `u_h = theta_h + xi_h`, the mode is
//! `argmax_k phi_{h,k}(v_h)` with `v_h = (x_h, u_h)`, and
//! `x_{h+1} = g_{h,k_h}(v_h) + eta_h`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::polynomial::{eval_coeffs, top_norm, MonomialBasis, Polynomial};
use crate::pwa_env::try_parallel_mean;
use crate::rng::StreamRng;
use crate::smoothing::{sample_context, AdversaryStrategy, History, NoiseLaw, SmoothnessClass};
use crate::space::{l1_unchecked, Context, IsometryConstants, Loss, ParamSpace, PseudoMetric};
use crate::stats::wilson_interval;

/// One mode's map `g: R^{m+d} -> R^m`.
#[derive(Clone)]
pub enum Dynamics {
    /// `g(v) = A v + b` with `A` row-major `m x (m + d)`.
    Affine { a: Vec<f64>, b: Vec<f64> },
    /// One polynomial in `v` per state coordinate.
    Polynomial(Vec<Polynomial>),
    Callback(Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
}

impl std::fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dynamics::Affine { a, b } => f.debug_struct("Affine").field("a", a).field("b", b).finish(),
            Dynamics::Polynomial(p) => f.debug_tuple("Polynomial").field(&p.len()).finish(),
            Dynamics::Callback(_) => f.write_str("Callback(..)"),
        }
    }
}

impl Dynamics {
    fn validate(&self, m: usize, d: usize) -> Result<()> {
        match self {
            Dynamics::Affine { a, b } => {
                if a.len() != m * (m + d) {
                    return Err(Error::DimensionMismatch {
                        expected: m * (m + d),
                        actual: a.len(),
                    });
                }
                if b.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        actual: b.len(),
                    });
                }
            }
            Dynamics::Polynomial(ps) => {
                if ps.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        actual: ps.len(),
                    });
                }
                if let Some(p) = ps.iter().find(|p| p.basis().dim() != m + d) {
                    return Err(Error::DimensionMismatch {
                        expected: m + d,
                        actual: p.basis().dim(),
                    });
                }
            }
            Dynamics::Callback(_) => {}
        }
        Ok(())
    }

    fn apply(&self, v: &[f64], m: usize) -> Vec<f64> {
        match self {
            Dynamics::Affine { a, b } => {
                let cols = v.len();
                (0..m)
                    .map(|i| {
                        b[i] + a[i * cols..(i + 1) * cols]
                            .iter()
                            .zip(v)
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                    })
                    .collect()
            }
            Dynamics::Polynomial(ps) => ps.iter().map(|p| p.eval(v)).collect(),
            Dynamics::Callback(f) => f(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanBoundary {
    /// `phi_{h,k}(v) = <w_{h,k}, (v, 1)>` with unit-norm rows.
    Affine,
    /// `phi_{h,k}(v) = f_{w_{h,k}}(v)` with unit-norm top coefficients.
    Polynomial { degree: u32 },
}

/// Losses on the visited `v_{1:H}`, all clipped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanLoss {
    Zero,
    /// `sum_h |v_h|_1 / (2 D H)`.
    L1Norm,
    /// `scale * sum_h (|x_h - state_target|_1 + |u_h - input_target|_1)`.
    L1Tracking {
        state_target: Vec<f64>,
        input_target: Vec<f64>,
        scale: f64,
    },
    /// `scale * sum_h |x_h - target|_2^2`.
    QuadraticTracking { target: Vec<f64>, scale: f64 },
    /// `sum_h (a_h |x_h - state_target|_1 + b_h |u_h - input_target|_1)`
    /// with per-step weights in `[0, 1]`.
    StageL1 {
        state_target: Vec<f64>,
        input_target: Vec<f64>,
        state_weights: Vec<f64>,
        input_weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct HybridSystemSpec {
    horizon: usize,
    modes: usize,
    state_dim: usize,
    input_dim: usize,
    dynamics: Vec<Vec<Dynamics>>,
    boundary: PlanBoundary,
    basis: Option<Arc<MonomialBasis>>,
    weights: Vec<Vec<Vec<f64>>>,
    margin: f64,
    diameter: f64,
    lipschitz: f64,
    plan_space: ParamSpace,
    loss: PlanLoss,
}

const NORM_TOL: f64 = 1e-9;

/// Boundary rows and the constants a planning environment declares.
#[derive(Debug, Clone)]
pub struct SystemParts {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// `dynamics[h][k]`.
    pub dynamics: Vec<Vec<Dynamics>>,
    pub boundary: PlanBoundary,
    /// `weights[h][k]`: `m + d + 1` entries (affine) or one per monomial.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub margin: f64,
    pub diameter: f64,
    pub lipschitz: f64,
    pub plan_space: ParamSpace,
    pub loss: PlanLoss,
}

impl HybridSystemSpec {
    pub fn new(parts: SystemParts) -> Result<Self> {
        let SystemParts {
            horizon,
            state_dim: m,
            input_dim: d,
            dynamics,
            boundary,
            weights,
            margin,
            diameter,
            lipschitz,
            plan_space,
            loss,
        } = parts;
        if horizon == 0 || m == 0 || d == 0 {
            return Err(invalid("dims", "H, m and d must be at least 1"));
        }
        if dynamics.len() != horizon || weights.len() != horizon {
            return Err(invalid("dynamics", "need one entry per planning step"));
        }
        let modes = dynamics[0].len();
        if modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        for (h, (gs, ws)) in dynamics.iter().zip(&weights).enumerate() {
            if gs.len() != modes || ws.len() != modes {
                return Err(invalid(
                    "modes",
                    format!("step {h} declares {} maps and {} rows, expected {modes}", gs.len(), ws.len()),
                ));
            }
            for g in gs {
                g.validate(m, d)?;
            }
        }
        let basis = match boundary {
            PlanBoundary::Affine => None,
            PlanBoundary::Polynomial { degree } => {
                if degree == 0 {
                    return Err(invalid("degree", "must be at least 1"));
                }
                Some(Arc::new(MonomialBasis::new(m + d, degree)))
            }
        };
        let row_len = basis.as_ref().map_or(m + d + 1, |b| b.len());
        for w in weights.iter().flatten() {
            if w.len() != row_len {
                return Err(Error::DimensionMismatch {
                    expected: row_len,
                    actual: w.len(),
                });
            }
            let norm = match &basis {
                None => w.iter().map(|x| x * x).sum::<f64>().sqrt(),
                Some(b) => top_norm(b, w),
            };
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::SpecRejected(format!(
                    "boundary row has norm {norm}, expected 1"
                )));
            }
        }
        for (name, v) in [("margin", margin), ("D", diameter), ("L", lipschitz)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("{v} must be positive and finite")));
            }
        }
        if plan_space.dim() != horizon * d {
            return Err(Error::DimensionMismatch {
                expected: horizon * d,
                actual: plan_space.dim(),
            });
        }
        match &loss {
            PlanLoss::L1Tracking {
                state_target,
                input_target,
                scale,
            } => {
                if state_target.len() != m || input_target.len() != d {
                    return Err(invalid("loss", "target dimensions do not match the system"));
                }
                if !(*scale > 0.0 && *scale <= 1.0) {
                    return Err(invalid("scale", "must lie in (0, 1] to stay 1-Lipschitz"));
                }
            }
            PlanLoss::QuadraticTracking { target, scale } => {
                if target.len() != m {
                    return Err(invalid("loss", "target dimension does not match the state"));
                }
                if !(*scale > 0.0) {
                    return Err(invalid("scale", "must be positive"));
                }
            }
            PlanLoss::StageL1 {
                state_target,
                input_target,
                state_weights,
                input_weights,
            } => {
                if state_target.len() != m || input_target.len() != d {
                    return Err(invalid("loss", "target dimensions do not match the system"));
                }
                if state_weights.len() != horizon || input_weights.len() != horizon {
                    return Err(invalid("loss", "need one weight per planning step"));
                }
                if state_weights.iter().chain(input_weights).any(|w| !(0.0..=1.0).contains(w)) {
                    return Err(invalid("weights", "must lie in [0, 1] to stay 1-Lipschitz"));
                }
            }
            PlanLoss::Zero | PlanLoss::L1Norm => {}
        }
        let spec = Self {
            horizon,
            modes,
            state_dim: m,
            input_dim: d,
            dynamics,
            boundary,
            basis,
            weights,
            margin,
            diameter,
            lipschitz,
            plan_space,
            loss,
        };
        let realized = spec.realized_margin();
        if realized < margin * (1.0 - NORM_TOL) {
            return Err(Error::SpecRejected(format!(
                "realized margin {realized} is below the declared {margin}"
            )));
        }
        Ok(spec)
    }

    /// The 1-D two-mode system `x' = x + u` (if `u >= 0`) or `x' = x - u`,
    /// with boundary rows `(0, 1, 0)` and `(0, -1, 0)`, margin 2 and plans
    /// in `[-u_max, u_max]^H`.
    pub fn two_mode_line(
        horizon: usize,
        u_max: f64,
        diameter: f64,
        lipschitz: f64,
        loss: PlanLoss,
    ) -> Result<Self> {
        let step_maps = vec![
            Dynamics::Affine {
                a: vec![1.0, 1.0],
                b: vec![0.0],
            },
            Dynamics::Affine {
                a: vec![1.0, -1.0],
                b: vec![0.0],
            },
        ];
        let rows = vec![vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0]];
        Self::new(SystemParts {
            horizon,
            state_dim: 1,
            input_dim: 1,
            dynamics: vec![step_maps; horizon],
            boundary: PlanBoundary::Affine,
            weights: vec![rows; horizon],
            margin: 2.0,
            diameter,
            lipschitz,
            plan_space: ParamSpace::cube(horizon, -u_max, u_max)?,
            loss,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn plan_space(&self) -> &ParamSpace {
        &self.plan_space
    }

    pub fn loss(&self) -> &PlanLoss {
        &self.loss
    }

    pub fn boundary(&self) -> &PlanBoundary {
        &self.boundary
    }

    /// `m + H (d + m)`.
    pub fn context_dim(&self) -> usize {
        self.state_dim + self.horizon * (self.input_dim + self.state_dim)
    }

    /// Packs an episode's randomness into a context.
    pub fn pack_context(&self, x1: &[f64], xi: &[Vec<f64>], eta: &[Vec<f64>]) -> Result<Context> {
        if x1.len() != self.state_dim
            || xi.len() != self.horizon
            || eta.len() != self.horizon
            || xi.iter().any(|v| v.len() != self.input_dim)
            || eta.iter().any(|v| v.len() != self.state_dim)
        {
            return Err(invalid("noises", "lengths do not match the system"));
        }
        let mut z = x1.to_vec();
        xi.iter().for_each(|v| z.extend_from_slice(v));
        eta.iter().for_each(|v| z.extend_from_slice(v));
        Ok(Context::new(z))
    }

    fn phi(&self, h: usize, k: usize, v: &[f64]) -> f64 {
        let w = &self.weights[h][k];
        match &self.basis {
            None => {
                let n = v.len();
                w[n] + w[..n].iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
            }
            Some(b) => eval_coeffs(b, w, v),
        }
    }

    /// `argmax_k phi_{h,k}(v)`, ties to the smallest index.
    pub fn mode_at(&self, h: usize, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_val = self.phi(h, 0, v);
        for k in 1..self.modes {
            let val = self.phi(h, k, v);
            if val > best_val {
                best = k;
                best_val = val;
            }
        }
        best
    }

    /// Minimum Euclidean gap between rows of distinct modes at the same step,
    /// ignoring the intercept (or constant coefficient).
    pub fn realized_margin(&self) -> f64 {
        let mut gamma = f64::INFINITY;
        for rows in &self.weights {
            for k in 0..self.modes {
                for kp in k + 1..self.modes {
                    let (a, b) = (&rows[k], &rows[kp]);
                    let gap: f64 = match &self.basis {
                        None => a[..a.len() - 1]
                            .iter()
                            .zip(&b[..b.len() - 1])
                            .map(|(x, y)| (x - y).powi(2))
                            .sum(),
                        Some(basis) => basis
                            .exponents()
                            .iter()
                            .enumerate()
                            .filter(|(_, e)| e.iter().any(|p| *p > 0))
                            .map(|(i, _)| (a[i] - b[i]).powi(2))
                            .sum(),
                    };
                    gamma = gamma.min(gap.sqrt());
                }
            }
        }
        gamma
    }
}

/// The default episode law: a fixed initial state and i.i.d. noise on every
/// `xi_h` and `eta_h` coordinate. Smoothness is that of one step's
/// `(xi_h, eta_h)` block; the initial state need not be smooth.
#[derive(Debug, Clone)]
pub struct PlanningNoise {
    x1: Vec<f64>,
    horizon: usize,
    input_dim: usize,
    width: f64,
    noise: NoiseLaw,
    class: SmoothnessClass,
}

impl PlanningNoise {
    pub fn new(spec: &HybridSystemSpec, x1: Vec<f64>, width: f64, noise: NoiseLaw) -> Result<Self> {
        if x1.len() != spec.state_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.state_dim,
                actual: x1.len(),
            });
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(invalid("width", format!("{width} must be positive and finite")));
        }
        let block = spec.input_dim + spec.state_dim;
        let sup = x1.iter().fold(0.5 * width, |acc, x| acc.max(x.abs()));
        let class = SmoothnessClass::directional(spec.context_dim(), noise.sigma_dir(width, block), sup)?;
        Ok(Self {
            x1,
            horizon: spec.horizon,
            input_dim: spec.input_dim,
            width,
            noise,
            class,
        })
    }

    pub fn width(&self) -> f64 {
        self.width
    }
}

impl AdversaryStrategy for PlanningNoise {
    fn class(&self) -> &SmoothnessClass {
        &self.class
    }

    fn name(&self) -> &str {
        "planning_noise"
    }

    fn draw(&self, _history: &History<'_>, rng: &mut StreamRng) -> Context {
        let m = self.x1.len();
        let mut z = self.x1.clone();
        z.extend((0..self.horizon * (self.input_dim + m)).map(|_| self.noise.sample(self.width, rng)));
        Context::new(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `x_1, ..., x_{H+1}`.
    pub states: Vec<Vec<f64>>,
    /// Realized inputs `u_h = theta_h + xi_h`.
    pub inputs: Vec<Vec<f64>>,
    pub modes: Vec<usize>,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub loss: f64,
    /// Some state exceeded the declared bound and was projected back.
    pub clipped: bool,
}

impl TrajectoryRecord {
    pub fn v(&self, h: usize) -> Vec<f64> {
        let mut v = self.states[h].clone();
        v.extend_from_slice(&self.inputs[h]);
        v
    }

    /// `G = (x_1, ..., x_H)` flattened.
    pub fn visited_states(&self) -> Vec<f64> {
        self.states[..self.inputs.len()].concat()
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn propagate(
    spec: &HybridSystemSpec,
    plan: &[f64],
    z: &Context,
    forced: Option<&[usize]>,
) -> Result<TrajectoryRecord> {
    let (m, d, big_h) = (spec.state_dim, spec.input_dim, spec.horizon);
    if plan.len() != big_h * d {
        return Err(Error::DimensionMismatch {
            expected: big_h * d,
            actual: plan.len(),
        });
    }
    if z.z.len() != spec.context_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.context_dim(),
            actual: z.z.len(),
        });
    }
    let x1 = &z.z[..m];
    let xi_off = m;
    let eta_off = m + big_h * d;
    let mut states = Vec::with_capacity(big_h + 1);
    states.push(x1.to_vec());
    let mut inputs = Vec::with_capacity(big_h);
    let mut modes = Vec::with_capacity(big_h);
    let mut xis = Vec::with_capacity(big_h);
    let mut etas = Vec::with_capacity(big_h);
    let mut clipped = false;
    for h in 0..big_h {
        let xi = &z.z[xi_off + h * d..xi_off + (h + 1) * d];
        let eta = &z.z[eta_off + h * m..eta_off + (h + 1) * m];
        let u: Vec<f64> = plan[h * d..(h + 1) * d]
            .iter()
            .zip(xi)
            .map(|(a, b)| a + b)
            .collect();
        let mut v = states[h].clone();
        v.extend_from_slice(&u);
        let k = match forced {
            Some(ks) => ks[h],
            None => spec.mode_at(h, &v),
        };
        let mut next: Vec<f64> = spec.dynamics[h][k]
            .apply(&v, m)
            .iter()
            .zip(eta)
            .map(|(g, e)| g + e)
            .collect();
        if next.len() != m || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { step: h + 1 });
        }
        let norm = l1(&next);
        if norm > spec.diameter {
            let s = spec.diameter / norm;
            next.iter_mut().for_each(|x| *x *= s);
            clipped = true;
        }
        inputs.push(u);
        modes.push(k);
        xis.push(xi.to_vec());
        etas.push(eta.to_vec());
        states.push(next);
    }
    let mut traj = TrajectoryRecord {
        states,
        inputs,
        modes,
        xi: xis,
        eta: etas,
        loss: 0.0,
        clipped,
    };
    traj.loss = planning_loss(spec, &traj);
    Ok(traj)
}

/// Rolls out `plan` with state-dependent mode selection.
pub fn rollout(spec: &HybridSystemSpec, plan: &[f64], z: &Context) -> Result<TrajectoryRecord> {
    propagate(spec, plan, z, None)
}

/// Rolls out `plan` with the mode sequence forced to `modes`.
pub fn rollout_fixed_modes(
    spec: &HybridSystemSpec,
    plan: &[f64],
    z: &Context,
    modes: &[usize],
) -> Result<TrajectoryRecord> {
    if modes.len() != spec.horizon || modes.iter().any(|k| *k >= spec.modes) {
        return Err(invalid("modes", "need H mode indices below K"));
    }
    propagate(spec, plan, z, Some(modes))
}

/// The environment's loss on the visited `v_{1:H}`, clipped to `[0, 1]`.
pub fn planning_loss(spec: &HybridSystemSpec, traj: &TrajectoryRecord) -> f64 {
    let big_h = traj.inputs.len();
    let raw = match &spec.loss {
        PlanLoss::Zero => 0.0,
        PlanLoss::L1Norm => {
            (0..big_h)
                .map(|h| l1(&traj.states[h]) + l1(&traj.inputs[h]))
                .sum::<f64>()
                / (2.0 * spec.diameter * big_h as f64)
        }
        PlanLoss::L1Tracking {
            state_target,
            input_target,
            scale,
        } => {
            scale
                * (0..big_h)
                    .map(|h| {
                        l1_unchecked(&traj.states[h], state_target)
                            + l1_unchecked(&traj.inputs[h], input_target)
                    })
                    .sum::<f64>()
        }
        PlanLoss::QuadraticTracking { target, scale } => {
            scale
                * (0..big_h)
                    .map(|h| {
                        traj.states[h]
                            .iter()
                            .zip(target)
                            .map(|(x, t)| (x - t).powi(2))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
        }
        PlanLoss::StageL1 {
            state_target,
            input_target,
            state_weights,
            input_weights,
        } => (0..big_h)
            .map(|h| {
                state_weights[h] * l1_unchecked(&traj.states[h], state_target)
                    + input_weights[h] * l1_unchecked(&traj.inputs[h], input_target)
            })
            .sum::<f64>(),
    };
    raw.clamp(0.0, 1.0)
}

/// Largest observed `|G(theta) - G(theta')|_1 / |theta - theta'|_1` over
/// random plan pairs, mode sequences and contexts from `strategy`. Rejects
/// the spec when the ratio exceeds the declared `L`.
pub fn fixed_mode_lipschitz_probe(
    spec: &HybridSystemSpec,
    strategy: &dyn AdversaryStrategy,
    n_pairs: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    use rand::Rng;
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let a = spec.plan_space.sample_uniform(rng);
        let b = spec.plan_space.sample_uniform(rng);
        let gap = l1_unchecked(&a, &b);
        if gap == 0.0 {
            continue;
        }
        let modes: Vec<usize> = (0..spec.horizon)
            .map(|_| rng.random_range(0..spec.modes))
            .collect();
        let z = sample_context(strategy, &History::empty(), rng)?;
        let ga = rollout_fixed_modes(spec, &a, &z, &modes)?.visited_states();
        let gb = rollout_fixed_modes(spec, &b, &z, &modes)?.visited_states();
        worst = worst.max(l1_unchecked(&ga, &gb) / gap);
    }
    if worst > spec.lipschitz * (1.0 + 1e-6) {
        return Err(Error::SpecRejected(format!(
            "fixed-mode maps have Lipschitz ratio {worst} above the declared {}",
            spec.lipschitz
        )));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementEstimate {
    pub probability: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
}

/// Probability that two plans see identical mode sequences under shared
/// noise drawn from `strategy`, with a 95% Wilson interval.
pub fn mode_agreement_probability(
    spec: &HybridSystemSpec,
    plan: &[f64],
    plan_prime: &[f64],
    strategy: &dyn AdversaryStrategy,
    n_mc: usize,
    seed: u64,
) -> Result<AgreementEstimate> {
    let est = try_parallel_mean(n_mc, seed, |rng| {
        let z = sample_context(strategy, &History::empty(), rng)?;
        let a = rollout(spec, plan, &z)?;
        let b = rollout(spec, plan_prime, &z)?;
        Ok(f64::from(u8::from(a.modes == b.modes)))
    })?;
    let hits = (est.mean * n_mc as f64).round() as u64;
    let (ci_low, ci_high) = wilson_interval(hits, n_mc as u64, 1.96);
    Ok(AgreementEstimate {
        probability: est.mean,
        se: est.se,
        ci_low,
        ci_high,
        samples: n_mc,
    })
}

/// `(6 D H^2 K^2 L / (gamma sigma_dir), 1)`.
pub fn planning_isometry(spec: &HybridSystemSpec, sigma_dir: f64) -> IsometryConstants {
    let h = spec.horizon as f64;
    let k = spec.modes as f64;
    IsometryConstants {
        alpha: 6.0 * spec.diameter * h * h * k * k * spec.lipschitz / (spec.margin * sigma_dir),
        beta: 1.0,
    }
}

/// The planning environment as a loss over plans.
#[derive(Debug, Clone)]
pub struct PlanningLoss {
    spec: Arc<HybridSystemSpec>,
}

impl PlanningLoss {
    pub fn new(spec: Arc<HybridSystemSpec>) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &HybridSystemSpec {
        &self.spec
    }
}

impl Loss for PlanningLoss {
    /// A non-finite rollout counts as the maximal loss.
    fn eval(&self, theta: &[f64], z: &Context) -> f64 {
        rollout(&self.spec, theta, z).map_or(1.0, |t| t.loss)
    }

    fn param_dim(&self) -> usize {
        self.spec.plan_space.dim()
    }

    fn context_dim(&self) -> usize {
        self.spec.context_dim()
    }
}

/// `rho(theta, theta', z) = |theta - theta'|_1 + sum_h |x_h - x'_h|_1`.
impl PseudoMetric for PlanningLoss {
    fn rho(&self, a: &[f64], b: &[f64], z: &Context) -> f64 {
        match (rollout(&self.spec, a, z), rollout(&self.spec, b, z)) {
            (Ok(ta), Ok(tb)) => {
                l1_unchecked(a, b) + l1_unchecked(&ta.visited_states(), &tb.visited_states())
            }
            _ => self.diameter_bound(),
        }
    }

    fn diameter_bound(&self) -> f64 {
        self.spec.plan_space.l1_diameter()
            + 2.0 * self.spec.diameter * self.spec.horizon as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::smoothing::{Labeler, UniformBox};
    use proptest::prelude::*;

    fn line(loss: PlanLoss) -> HybridSystemSpec {
        HybridSystemSpec::two_mode_line(2, 1.0, 10.0, 1.0, loss).unwrap()
    }

    fn quiet(spec: &HybridSystemSpec, x1: f64) -> Context {
        spec.pack_context(&[x1], &[vec![0.0], vec![0.0]], &[vec![0.0], vec![0.0]])
            .unwrap()
    }

    fn noise_box(spec: &HybridSystemSpec, half: f64) -> UniformBox {
        let n = spec.context_dim();
        UniformBox::new(vec![-half; n], vec![half; n], Labeler::None).unwrap()
    }

    #[test]
    fn single_mode_zero_map() {
        let spec = HybridSystemSpec::new(SystemParts {
            horizon: 3,
            state_dim: 1,
            input_dim: 1,
            dynamics: vec![vec![Dynamics::Affine { a: vec![0.0, 0.0], b: vec![0.0] }]; 3],
            boundary: PlanBoundary::Affine,
            weights: vec![vec![vec![0.0, 0.0, 1.0]]; 3],
            margin: 1.0,
            diameter: 1.0,
            lipschitz: 1.0,
            plan_space: ParamSpace::cube(3, -1.0, 1.0).unwrap(),
            loss: PlanLoss::Zero,
        })
        .unwrap();
        let z = spec
            .pack_context(&[0.0], &vec![vec![0.0]; 3], &vec![vec![0.0]; 3])
            .unwrap();
        let t = rollout(&spec, &[0.3, -0.2, 0.9], &z).unwrap();
        assert!(t.states.iter().all(|x| x[0] == 0.0));
        assert_eq!(rollout_fixed_modes(&spec, &[0.3, -0.2, 0.9], &z, &[0, 0, 0]).unwrap(), t);
    }

    #[test]
    fn two_mode_line_examples() {
        let spec = line(PlanLoss::Zero);
        let t = rollout(&spec, &[1.0, -1.0], &quiet(&spec, 0.0)).unwrap();
        assert_eq!(t.modes, vec![0, 1]);
        let xs: Vec<f64> = t.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);

        let tie = rollout(&spec, &[0.0, 0.0], &quiet(&spec, 0.0)).unwrap();
        assert_eq!(tie.modes, vec![0, 0]);
        assert!(tie.states.iter().all(|x| x[0] == 0.0));

        let forced = rollout_fixed_modes(&spec, &[1.0, -1.0], &quiet(&spec, 0.0), &[1, 1]).unwrap();
        let xs: Vec<f64> = forced.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, -1.0, 0.0]);

        let same = rollout_fixed_modes(&spec, &[1.0, -1.0], &quiet(&spec, 0.0), &t.modes).unwrap();
        assert_eq!(same, t);
        assert!(rollout_fixed_modes(&spec, &[1.0, -1.0], &quiet(&spec, 0.0), &[2, 0]).is_err());
    }

    #[test]
    fn brute_force_mode_choice() {
        // the realized modes are the argmax over both branches at each step
        let spec = line(PlanLoss::Zero);
        let z = spec
            .pack_context(&[0.2], &[vec![0.1], vec![-0.3]], &[vec![0.05], vec![0.0]])
            .unwrap();
        let plan = [-0.4, 0.1];
        let t = rollout(&spec, &plan, &z).unwrap();
        let mut x = 0.2;
        for (h, (u0, e)) in [(-0.4 + 0.1, 0.05), (0.1 - 0.3, 0.0)].iter().enumerate() {
            let k = if *u0 >= 0.0 { 0 } else { 1 };
            assert_eq!(t.modes[h], k);
            x = if k == 0 { x + u0 } else { x - u0 } + e;
            assert!((t.states[h + 1][0] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        let zero = line(PlanLoss::Zero);
        let t = rollout(&zero, &[1.0, -1.0], &quiet(&zero, 0.0)).unwrap();
        assert_eq!(planning_loss(&zero, &t), 0.0);

        let norm = line(PlanLoss::L1Norm);
        let t = rollout(&norm, &[0.0, 0.0], &quiet(&norm, 0.0)).unwrap();
        assert_eq!(t.loss, 0.0);

        let quad = line(PlanLoss::QuadraticTracking {
            target: vec![0.5],
            scale: 0.25,
        });
        let t = rollout(&quad, &[1.0, -1.0], &quiet(&quad, 0.0)).unwrap();
        // x_1 = 0, x_2 = 1 from the hand simulation above
        assert!((t.loss - 0.25 * (0.25 + 0.25)).abs() < 1e-15);
    }

    #[test]
    fn stage_weights_select_terms() {
        let spec = line(PlanLoss::StageL1 {
            state_target: vec![0.5],
            input_target: vec![-0.5],
            state_weights: vec![0.0, 1.0],
            input_weights: vec![1.0, 0.0],
        });
        // x = (0, 1, 2), u = (1, -1): |u_1 + 0.5| + |x_2 - 0.5| = 1.5 + 0.5, clipped
        let t = rollout(&spec, &[1.0, -1.0], &quiet(&spec, 0.0)).unwrap();
        assert_eq!(t.loss, 1.0);
        let t = rollout(&spec, &[-0.25, 0.9], &quiet(&spec, 0.0)).unwrap();
        assert!((t.loss - (0.25 + 0.25)).abs() < 1e-15);
        assert!(HybridSystemSpec::two_mode_line(2, 1.0, 10.0, 1.0, PlanLoss::StageL1 {
            state_target: vec![0.0],
            input_target: vec![0.0],
            state_weights: vec![0.0, 2.0],
            input_weights: vec![1.0, 0.0],
        })
        .is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_norm = HybridSystemSpec::new(SystemParts {
            horizon: 1,
            state_dim: 1,
            input_dim: 1,
            dynamics: vec![vec![Dynamics::Affine { a: vec![1.0, 1.0], b: vec![0.0] }; 2]],
            boundary: PlanBoundary::Affine,
            weights: vec![vec![vec![0.0, 2.0, 0.0], vec![0.0, -1.0, 0.0]]],
            margin: 1.0,
            diameter: 1.0,
            lipschitz: 1.0,
            plan_space: ParamSpace::cube(1, -1.0, 1.0).unwrap(),
            loss: PlanLoss::Zero,
        });
        assert!(matches!(bad_norm, Err(Error::SpecRejected(_))));
        assert!(matches!(
            HybridSystemSpec::two_mode_line(2, 1.0, 10.0, 1.0, PlanLoss::L1Tracking {
                state_target: vec![0.0],
                input_target: vec![0.0],
                scale: 2.0,
            }),
            Err(Error::InvalidParameter { .. })
        ));
        let mut spec = line(PlanLoss::Zero);
        spec.margin = 3.0;
        assert!(spec.realized_margin() < spec.margin);
    }

    #[test]
    fn non_finite_state_flagged() {
        let blowup = Dynamics::Callback(Arc::new(|_: &[f64]| vec![f64::NAN]));
        let spec = HybridSystemSpec::new(SystemParts {
            horizon: 1,
            state_dim: 1,
            input_dim: 1,
            dynamics: vec![vec![blowup]],
            boundary: PlanBoundary::Affine,
            weights: vec![vec![vec![0.0, 0.0, 1.0]]],
            margin: 1.0,
            diameter: 1.0,
            lipschitz: 1.0,
            plan_space: ParamSpace::cube(1, -1.0, 1.0).unwrap(),
            loss: PlanLoss::L1Norm,
        })
        .unwrap();
        let z = spec.pack_context(&[0.0], &[vec![0.0]], &[vec![0.0]]).unwrap();
        assert!(matches!(
            rollout(&spec, &[0.0], &z),
            Err(Error::NonFiniteState { step: 1 })
        ));
        assert_eq!(PlanningLoss::new(Arc::new(spec)).eval(&[0.0], &z), 1.0);
    }

    #[test]
    fn clipping_is_flagged() {
        let spec = HybridSystemSpec::two_mode_line(2, 1.0, 0.5, 1.0, PlanLoss::Zero).unwrap();
        let t = rollout(&spec, &[1.0, 1.0], &quiet(&spec, 0.0)).unwrap();
        assert!(t.clipped);
        assert!(t.states.iter().all(|x| l1(x) <= 0.5 + 1e-15));
    }

    #[test]
    fn lipschitz_probe_examples() {
        // x' = x + u with H = 2: G = (x_1, x_2) moves by at most |du_1|
        let integrator = HybridSystemSpec::new(SystemParts {
            horizon: 2,
            state_dim: 1,
            input_dim: 1,
            dynamics: vec![vec![Dynamics::Affine { a: vec![1.0, 1.0], b: vec![0.0] }]; 2],
            boundary: PlanBoundary::Affine,
            weights: vec![vec![vec![0.0, 0.0, 1.0]]; 2],
            margin: 1.0,
            diameter: 10.0,
            lipschitz: 3.0,
            plan_space: ParamSpace::cube(2, -1.0, 1.0).unwrap(),
            loss: PlanLoss::Zero,
        })
        .unwrap();
        let adv = noise_box(&integrator, 0.1);
        let ratio = fixed_mode_lipschitz_probe(&integrator, &adv, 500, &mut stream(1, 0)).unwrap();
        assert!(ratio <= 3.0);

        let constant = HybridSystemSpec::new(SystemParts {
            dynamics: vec![vec![Dynamics::Affine { a: vec![0.0, 0.0], b: vec![0.5] }]; 2],
            lipschitz: 1.0,
            ..parts_of(&integrator)
        })
        .unwrap();
        let ratio = fixed_mode_lipschitz_probe(&constant, &adv, 200, &mut stream(2, 0)).unwrap();
        assert_eq!(ratio, 0.0);

        let tight = HybridSystemSpec::new(SystemParts {
            lipschitz: 0.1,
            ..parts_of(&integrator)
        })
        .unwrap();
        assert!(matches!(
            fixed_mode_lipschitz_probe(&tight, &adv, 200, &mut stream(3, 0)),
            Err(Error::SpecRejected(_))
        ));
    }

    fn parts_of(spec: &HybridSystemSpec) -> SystemParts {
        SystemParts {
            horizon: spec.horizon,
            state_dim: spec.state_dim,
            input_dim: spec.input_dim,
            dynamics: spec.dynamics.clone(),
            boundary: spec.boundary.clone(),
            weights: spec.weights.clone(),
            margin: spec.margin,
            diameter: spec.diameter,
            lipschitz: spec.lipschitz,
            plan_space: spec.plan_space.clone(),
            loss: spec.loss.clone(),
        }
    }

    #[test]
    fn agreement_examples() {
        let spec = line(PlanLoss::Zero);
        let adv = noise_box(&spec, 0.5);
        let same = mode_agreement_probability(&spec, &[0.2, 0.1], &[0.2, 0.1], &adv, 2000, 1).unwrap();
        assert_eq!(same.probability, 1.0);

        let single = HybridSystemSpec::new(SystemParts {
            dynamics: vec![vec![Dynamics::Affine { a: vec![1.0, 1.0], b: vec![0.0] }]; 2],
            weights: vec![vec![vec![0.0, 0.0, 1.0]]; 2],
            ..parts_of(&spec)
        })
        .unwrap();
        let one = mode_agreement_probability(&single, &[0.9, -0.9], &[-0.9, 0.9], &adv, 2000, 1).unwrap();
        assert_eq!(one.probability, 1.0);
    }

    #[test]
    fn disagreement_within_isometry_bound() {
        let spec = line(PlanLoss::Zero);
        let adv = noise_box(&spec, 0.5);
        let sigma = crate::smoothing::uniform_box_sigma_dir(&vec![1.0; spec.context_dim()]);
        let iso = planning_isometry(&spec, sigma);
        let mut rng = stream(4, 0);
        for i in 0..20 {
            let a = spec.plan_space().sample_uniform(&mut rng);
            let b: Vec<f64> = a
                .iter()
                .map(|x| (x + crate::rng::uniform_in(&mut rng, -0.05, 0.05)).clamp(-1.0, 1.0))
                .collect();
            let est = mode_agreement_probability(&spec, &a, &b, &adv, 100_000, i).unwrap();
            let bound = iso.bound(l1_unchecked(&a, &b));
            assert!(1.0 - est.probability <= bound + 3.0 * est.se);
        }
    }

    #[test]
    fn polynomial_boundary_reuses_basis() {
        let basis = Arc::new(MonomialBasis::new(2, 2));
        // top block (x^2, xu, u^2): rows +-(0, 1, 0) on xu plus a constant
        let mut w1 = vec![0.0; basis.len()];
        let mut w2 = vec![0.0; basis.len()];
        let xu = basis
            .exponents()
            .iter()
            .position(|e| e == &vec![1, 1])
            .unwrap();
        w1[xu] = 1.0;
        w2[xu] = -1.0;
        let spec = HybridSystemSpec::new(SystemParts {
            horizon: 1,
            state_dim: 1,
            input_dim: 1,
            dynamics: vec![vec![
                Dynamics::Affine { a: vec![1.0, 1.0], b: vec![0.0] },
                Dynamics::Affine { a: vec![1.0, -1.0], b: vec![0.0] },
            ]],
            boundary: PlanBoundary::Polynomial { degree: 2 },
            weights: vec![vec![w1, w2]],
            margin: 2.0,
            diameter: 10.0,
            lipschitz: 1.0,
            plan_space: ParamSpace::cube(1, -1.0, 1.0).unwrap(),
            loss: PlanLoss::Zero,
        })
        .unwrap();
        let z = spec.pack_context(&[1.0], &[vec![0.0]], &[vec![0.0]]).unwrap();
        assert_eq!(rollout(&spec, &[0.5], &z).unwrap().modes, vec![0]);
        assert_eq!(rollout(&spec, &[-0.5], &z).unwrap().modes, vec![1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn coupled_rollouts_respect_lipschitz(
            seed in any::<u64>(),
            a in prop::collection::vec(-1.0f64..1.0, 2),
            b in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let spec = line(PlanLoss::L1Tracking {
                state_target: vec![0.5],
                input_target: vec![0.0],
                scale: 0.5,
            });
            let adv = noise_box(&spec, 0.5);
            let z = sample_context(&adv, &History::empty(), &mut stream(seed, 0)).unwrap();
            let ta = rollout(&spec, &a, &z).unwrap();
            let tb = rollout(&spec, &b, &z).unwrap();
            let gap = l1_unchecked(&a, &b);
            let state_gap = l1_unchecked(&ta.visited_states(), &tb.visited_states());
            if ta.modes == tb.modes {
                prop_assert!(state_gap <= spec.lipschitz() * gap + 1e-12);
            }
            let loss = PlanningLoss::new(Arc::new(spec));
            prop_assert!(loss.eval(&a, &z) - loss.eval(&b, &z) <= loss.rho(&a, &b, &z) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&ta.loss));
        }

        #[test]
        fn rollout_is_deterministic(seed in any::<u64>()) {
            let spec = line(PlanLoss::L1Norm);
            let adv = noise_box(&spec, 0.5);
            let z = sample_context(&adv, &History::empty(), &mut stream(seed, 0)).unwrap();
            let plan = spec.plan_space().sample_uniform(&mut stream(seed, 1));
            prop_assert_eq!(rollout(&spec, &plan, &z).unwrap(), rollout(&spec, &plan, &z).unwrap());
        }
    }
}
