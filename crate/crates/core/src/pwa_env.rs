//! Piecewise-continuous losses: a mode is selected from the context by
//! boundary weights `theta_d`, then a Lipschitz mode loss is applied to that
//! mode's continuous block `theta_c^(k)`.
//!
//! Parameter layout: `[theta_c^(1), ..., theta_c^(K), theta_d]`. For the
//! tournament aggregation `theta_d` stores one weight block per pair `k < k'`
//! in order `(1,2), (1,3), ..., (K-1,K)`, with `w_{k'k} = -w_{kk'}`; for the
//! argmax aggregation it stores one block per mode. Mode indices are 0-based.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::polynomial::{eval_coeffs, top_norm, MonomialBasis};
use crate::smoothing::{sample_context, AdversaryStrategy, History, SmoothnessClass, SmoothnessKind};
use crate::space::{l1_unchecked, Context, IsometryConstants, Loss, ParamSpace, PseudoMetric};
use crate::stats::{parallel_mean, wilson_interval, MeanEstimate};

/// Odd increasing link `psi` with `a <= psi' <= A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Link {
    #[default]
    Identity,
    Scaled {
        scale: f64,
    },
    /// `x + c tanh(x)`, slopes in `[1, 1 + c]`.
    TanhPlus {
        c: f64,
    },
}

impl Link {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Link::Identity => x,
            Link::Scaled { scale } => scale * x,
            Link::TanhPlus { c } => x + c * x.tanh(),
        }
    }

    /// `(a, A)`.
    pub fn slope_bounds(&self) -> (f64, f64) {
        match *self {
            Link::Identity => (1.0, 1.0),
            Link::Scaled { scale } => (scale, scale),
            Link::TanhPlus { c } => (1.0, 1.0 + c),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Link::Identity => Ok(()),
            Link::Scaled { scale } if scale > 0.0 && scale.is_finite() => Ok(()),
            Link::Scaled { scale } => Err(invalid("link.scale", format!("{scale} must be positive"))),
            Link::TanhPlus { c } if c >= 0.0 && c.is_finite() => Ok(()),
            Link::TanhPlus { c } => Err(invalid("link.c", format!("{c} must be nonnegative"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryKind {
    /// `phi = <w, (z, 1)>`.
    Affine,
    /// `phi = f_w(z)`, a dense polynomial of the given degree.
    Polynomial { degree: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregation {
    Tournament,
    /// `argmax_k psi(phi_k)`, with a declared margin between weight blocks.
    Argmax { margin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    modes: usize,
    context_dim: usize,
    kind: BoundaryKind,
    link: Link,
    aggregation: Aggregation,
    basis: Option<Arc<MonomialBasis>>,
}

impl BoundarySpec {
    pub fn new(
        modes: usize,
        context_dim: usize,
        kind: BoundaryKind,
        link: Link,
        aggregation: Aggregation,
    ) -> Result<Self> {
        if modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        link.validate()?;
        if let Aggregation::Argmax { margin } = aggregation {
            if !(margin >= 0.0) {
                return Err(invalid("margin", "must be nonnegative"));
            }
        }
        let basis = match kind {
            BoundaryKind::Affine => None,
            BoundaryKind::Polynomial { degree } => {
                if degree == 0 {
                    return Err(invalid("degree", "must be at least 1"));
                }
                Some(Arc::new(MonomialBasis::new(context_dim, degree)))
            }
        };
        Ok(Self {
            modes,
            context_dim,
            kind,
            link,
            aggregation,
            basis,
        })
    }

    pub fn affine_tournament(modes: usize, context_dim: usize) -> Result<Self> {
        Self::new(
            modes,
            context_dim,
            BoundaryKind::Affine,
            Link::Identity,
            Aggregation::Tournament,
        )
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn kind(&self) -> &BoundaryKind {
        &self.kind
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn aggregation(&self) -> &Aggregation {
        &self.aggregation
    }

    pub fn basis(&self) -> Option<&MonomialBasis> {
        self.basis.as_deref()
    }

    /// Length of one weight block.
    pub fn weight_len(&self) -> usize {
        match &self.basis {
            None => self.context_dim + 1,
            Some(b) => b.len(),
        }
    }

    pub fn n_blocks(&self) -> usize {
        match self.aggregation {
            Aggregation::Tournament => self.modes * (self.modes - 1) / 2,
            Aggregation::Argmax { .. } => self.modes,
        }
    }

    pub fn discrete_dim(&self) -> usize {
        self.n_blocks() * self.weight_len()
    }

    /// Block index of the pair `k < kp`.
    pub fn pair_index(&self, k: usize, kp: usize) -> usize {
        debug_assert!(k < kp && kp < self.modes);
        k * self.modes - k * (k + 1) / 2 + (kp - k - 1)
    }

    fn block<'a>(&self, theta_d: &'a [f64], i: usize) -> &'a [f64] {
        let w = self.weight_len();
        &theta_d[i * w..(i + 1) * w]
    }

    fn phi(&self, w: &[f64], z: &[f64]) -> f64 {
        let raw = match &self.basis {
            None => {
                let (wx, w0) = w.split_at(self.context_dim);
                wx.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w0[0]
            }
            Some(b) => eval_coeffs(b, w, z),
        };
        // canonical zero so that ties compare equal
        self.link.apply(raw) + 0.0
    }

    /// `phibar(theta_d, k, kp, z)`, antisymmetric in `(k, kp)`.
    pub fn phi_bar(&self, theta_d: &[f64], k: usize, kp: usize, z: &[f64]) -> f64 {
        match k.cmp(&kp) {
            std::cmp::Ordering::Less => self.phi(self.block(theta_d, self.pair_index(k, kp)), z),
            std::cmp::Ordering::Greater => {
                -self.phi(self.block(theta_d, self.pair_index(kp, k)), z)
            }
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// Selected mode under this spec's aggregation.
    pub fn mode(&self, theta_d: &[f64], z: &[f64]) -> usize {
        match self.aggregation {
            Aggregation::Tournament => mode_tournament(self, theta_d, z),
            Aggregation::Argmax { .. } => mode_argmax(self, theta_d, z),
        }
    }

    /// Rescale each weight block to unit norm: the Euclidean norm for affine
    /// boundaries, the top-degree coefficient norm for polynomial ones.
    /// Zero blocks are left unchanged.
    pub fn normalize_blocks(&self, theta_d: &mut [f64]) {
        let w = self.weight_len();
        for block in theta_d.chunks_mut(w) {
            let norm = match &self.basis {
                None => block.iter().map(|x| x * x).sum::<f64>().sqrt(),
                Some(b) => top_norm(b, block),
            };
            if norm > 0.0 {
                block.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
}

/// Winner of a `K`-player tournament in which `k` beats `k'` when
/// `phibar(k, k') >= 0`. A tie awards a win to both players. The winner has
/// the most wins; ties go to the smallest index.
pub fn tournament_winner(modes: usize, phi_bar: impl Fn(usize, usize) -> f64) -> usize {
    let mut wins = vec![0usize; modes];
    for k in 0..modes {
        for kp in (k + 1)..modes {
            let s = phi_bar(k, kp);
            if s >= 0.0 {
                wins[k] += 1;
            }
            if s <= 0.0 {
                wins[kp] += 1;
            }
        }
    }
    let mut best = 0;
    for k in 1..modes {
        if wins[k] > wins[best] {
            best = k;
        }
    }
    best
}

pub fn mode_tournament(spec: &BoundarySpec, theta_d: &[f64], z: &[f64]) -> usize {
    tournament_winner(spec.modes, |k, kp| spec.phi_bar(theta_d, k, kp, z))
}

/// `argmax_k psi(phi_k(z))`, smallest index on ties.
pub fn mode_argmax(spec: &BoundarySpec, theta_d: &[f64], z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for k in 0..spec.modes {
        let v = spec.phi(spec.block(theta_d, k), z);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best
}

/// Per-mode loss `g_k(theta_c^(k), z)`, 1-Lipschitz in `theta_c^(k)` under
/// the l1 norm and valued in `[0, 1]`.
#[derive(Clone)]
pub enum ModeLoss {
    /// `min(1, |y - W z|_2^2 / 4)`, `W` row-major `out_dim x context_dim`.
    /// The `1/4` makes it 1-Lipschitz in `W` for `|z|_inf <= 1`.
    ClippedSquaredError { out_dim: usize },
    /// `I[y != label]`, no continuous parameters.
    ZeroOne { label: f64 },
    Constant { value: f64 },
    Callback {
        dim: usize,
        lipschitz: f64,
        f: Arc<dyn Fn(&[f64], &Context) -> f64 + Send + Sync>,
    },
}

impl std::fmt::Debug for ModeLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModeLoss::ClippedSquaredError { out_dim } => {
                write!(f, "ClippedSquaredError {{ out_dim: {out_dim} }}")
            }
            ModeLoss::ZeroOne { label } => write!(f, "ZeroOne {{ label: {label} }}"),
            ModeLoss::Constant { value } => write!(f, "Constant {{ value: {value} }}"),
            ModeLoss::Callback { dim, lipschitz, .. } => {
                write!(f, "Callback {{ dim: {dim}, lipschitz: {lipschitz} }}")
            }
        }
    }
}

impl ModeLoss {
    pub fn block_dim(&self, context_dim: usize) -> usize {
        match self {
            ModeLoss::ClippedSquaredError { out_dim } => out_dim * context_dim,
            ModeLoss::ZeroOne { .. } | ModeLoss::Constant { .. } => 0,
            ModeLoss::Callback { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, block: &[f64], z: &Context) -> f64 {
        let v = match self {
            ModeLoss::ClippedSquaredError { out_dim } => {
                let d = z.z.len();
                let y = z.label.as_deref().unwrap_or(&[]);
                let mut sq = 0.0;
                for o in 0..*out_dim {
                    let row = &block[o * d..(o + 1) * d];
                    let pred: f64 = row.iter().zip(&z.z).map(|(a, b)| a * b).sum();
                    let r = y.get(o).copied().unwrap_or(0.0) - pred;
                    sq += r * r;
                }
                (0.25 * sq).min(1.0)
            }
            ModeLoss::ZeroOne { label } => {
                if z.y() != *label {
                    1.0
                } else {
                    0.0
                }
            }
            ModeLoss::Constant { value } => *value,
            ModeLoss::Callback { f, .. } => f(block, z),
        };
        v.clamp(0.0, 1.0)
    }

    /// Minimizer of the unclipped squared error minus a linear term
    /// `<lin, W>`, per output row: `(X^T X) w_o = X^T y_o + 2 lin_o`.
    /// `None` for other mode kinds or a singular system.
    pub fn least_squares(&self, data: &[&Context], lin: Option<&[f64]>) -> Option<Vec<f64>> {
        let ModeLoss::ClippedSquaredError { out_dim } = self else {
            return None;
        };
        let d = data.first()?.z.len();
        let mut xtx = DMatrix::<f64>::zeros(d, d);
        for z in data {
            let x = DVector::from_column_slice(&z.z);
            xtx += &x * x.transpose();
        }
        let chol = xtx.cholesky()?;
        let mut out = Vec::with_capacity(out_dim * d);
        for o in 0..*out_dim {
            let mut rhs = DVector::<f64>::zeros(d);
            for z in data {
                let y = z.label.as_deref().and_then(|l| l.get(o)).copied().unwrap_or(0.0);
                for j in 0..d {
                    rhs[j] += z.z[j] * y;
                }
            }
            if let Some(lin) = lin {
                for j in 0..d {
                    rhs[j] += 2.0 * lin[o * d + j];
                }
            }
            out.extend(chol.solve(&rhs).iter());
        }
        Some(out)
    }
}

#[derive(Debug, Clone)]
pub struct PiecewiseLoss {
    boundary: BoundarySpec,
    modes: Vec<ModeLoss>,
    offsets: Vec<usize>,
    space: ParamSpace,
    normalize_discrete: bool,
}

impl PiecewiseLoss {
    pub fn new(boundary: BoundarySpec, modes: Vec<ModeLoss>, space: ParamSpace) -> Result<Self> {
        if modes.len() != boundary.modes() {
            return Err(Error::DimensionMismatch {
                expected: boundary.modes(),
                actual: modes.len(),
            });
        }
        let mut offsets = vec![0];
        for m in &modes {
            if let ModeLoss::Callback { lipschitz, .. } = m {
                if !(*lipschitz <= 1.0) {
                    return Err(invalid(
                        "mode_loss",
                        format!("declared Lipschitz constant {lipschitz} exceeds 1"),
                    ));
                }
            }
            offsets.push(offsets.last().unwrap() + m.block_dim(boundary.context_dim()));
        }
        let cont = *offsets.last().unwrap();
        if space.dim_continuous() != cont {
            return Err(invalid(
                "space",
                format!("continuous dimension {} but mode losses need {cont}", space.dim_continuous()),
            ));
        }
        if space.dim_discrete() != boundary.discrete_dim() {
            return Err(invalid(
                "space",
                format!(
                    "discrete dimension {} but boundaries need {}",
                    space.dim_discrete(),
                    boundary.discrete_dim()
                ),
            ));
        }
        let normalize_discrete = matches!(boundary.kind(), BoundaryKind::Affine);
        Ok(Self {
            boundary,
            modes,
            offsets,
            space,
            normalize_discrete,
        })
    }

    pub fn with_normalize_discrete(mut self, on: bool) -> Self {
        self.normalize_discrete = on;
        self
    }

    pub fn normalize_discrete(&self) -> bool {
        self.normalize_discrete
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    pub fn mode_losses(&self) -> &[ModeLoss] {
        &self.modes
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn block_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn continuous_block<'a>(&self, theta: &'a [f64], k: usize) -> &'a [f64] {
        &theta[self.block_range(k)]
    }

    pub fn discrete<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.space.dim_continuous()..]
    }

    pub fn mode(&self, theta: &[f64], z: &Context) -> usize {
        self.boundary.mode(self.discrete(theta), &z.z)
    }

    /// `theta` with its boundary blocks renormalized and clamped to the box.
    pub fn normalized(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        let c = self.space.dim_continuous();
        self.boundary.normalize_blocks(&mut out[c..]);
        for ((x, lo), hi) in out.iter_mut().zip(self.space.lower()).zip(self.space.upper()) {
            *x = x.clamp(*lo, *hi);
        }
        out
    }

    /// Largest per-mode l1 diameter of the continuous blocks.
    pub fn max_block_diameter(&self) -> f64 {
        (0..self.modes.len())
            .map(|k| {
                self.block_range(k)
                    .map(|i| self.space.upper()[i] - self.space.lower()[i])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

impl Loss for PiecewiseLoss {
    fn eval(&self, theta: &[f64], z: &Context) -> f64 {
        let k = self.mode(theta, z);
        self.modes[k].eval(self.continuous_block(theta, k), z)
    }

    fn param_dim(&self) -> usize {
        self.space.dim()
    }

    fn context_dim(&self) -> usize {
        self.boundary.context_dim()
    }

    fn as_piecewise(&self) -> Option<&PiecewiseLoss> {
        Some(self)
    }
}

/// `2 I[k != k'] + max_k |theta_c^(k) - theta_c'^(k)|_1`.
pub fn rho_pwa(loss: &PiecewiseLoss, a: &[f64], b: &[f64], z: &Context) -> f64 {
    let jump = if loss.mode(a, z) != loss.mode(b, z) {
        2.0
    } else {
        0.0
    };
    let cont = (0..loss.modes.len())
        .map(|k| l1_unchecked(loss.continuous_block(a, k), loss.continuous_block(b, k)))
        .fold(0.0, f64::max);
    jump + cont
}

impl PseudoMetric for PiecewiseLoss {
    fn rho(&self, a: &[f64], b: &[f64], z: &Context) -> f64 {
        rho_pwa(self, a, b, z)
    }

    fn diameter_bound(&self) -> f64 {
        2.0 + self.max_block_diameter()
    }
}

/// Pseudo-isometry constants for the loss under the given adversary class.
pub fn pseudo_isometry_constants(
    loss: &PiecewiseLoss,
    class: &SmoothnessClass,
) -> Result<IsometryConstants> {
    let (a, big_a) = loss.boundary.link().slope_bounds();
    let b = class.sup_bound;
    match (loss.boundary.kind(), loss.boundary.aggregation(), &class.kind) {
        (
            BoundaryKind::Affine,
            Aggregation::Tournament,
            SmoothnessKind::DirectionallySmooth { sigma_dir },
        ) => Ok(IsometryConstants {
            alpha: 2.0 * big_a * b.max(1.0) / (a * sigma_dir),
            beta: 1.0,
        }),
        (
            BoundaryKind::Affine,
            Aggregation::Argmax { margin },
            SmoothnessKind::DirectionallySmooth { sigma_dir },
        ) => {
            if !(*margin > 0.0) {
                return Err(invalid("margin", "argmax constants need a positive margin"));
            }
            Ok(IsometryConstants {
                alpha: 4.0 * big_a * b / (a * margin * sigma_dir),
                beta: 1.0,
            })
        }
        (
            BoundaryKind::Polynomial { degree },
            Aggregation::Tournament,
            SmoothnessKind::PolynomiallySmooth {
                degree: r,
                sigma_poly,
            },
        ) if degree == r => Ok(IsometryConstants {
            alpha: 2.0 * b * loss.space.l1_diameter() / sigma_poly,
            beta: 1.0 / *r as f64,
        }),
        (kind, agg, class_kind) => Err(Error::Unsupported(format!(
            "no pseudo-isometry constants for {kind:?} boundaries with {agg:?} aggregation under {class_kind:?}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Realized minimum gap; `+inf` for a single mode.
    pub gamma: f64,
    pub declared: f64,
    pub violated: bool,
}

/// Minimum pairwise Euclidean gap between boundary blocks, dropping the
/// intercept (affine) or constant coefficient (polynomial).
pub fn margin_check(spec: &BoundarySpec, theta_d: &[f64]) -> Result<MarginReport> {
    let Aggregation::Argmax { margin } = spec.aggregation else {
        return Err(Error::Unsupported(
            "margins are defined for the argmax aggregation".into(),
        ));
    };
    if theta_d.len() != spec.discrete_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.discrete_dim(),
            actual: theta_d.len(),
        });
    }
    let strip = |w: &[f64]| -> Vec<f64> {
        match spec.basis {
            None => w[..spec.context_dim].to_vec(),
            Some(_) => w[1..].to_vec(),
        }
    };
    let mut gamma = f64::INFINITY;
    for k in 0..spec.modes {
        for kp in (k + 1)..spec.modes {
            let a = strip(spec.block(theta_d, k));
            let b = strip(spec.block(theta_d, kp));
            let gap = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            gamma = gamma.min(gap);
        }
    }
    Ok(MarginReport {
        gamma,
        declared: margin,
        violated: gamma == 0.0 || gamma < margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipEstimate {
    pub rate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: usize,
}

/// Monte Carlo frequency with which `theta_d` and `theta_d'` select different
/// modes for contexts drawn from `strategy` (empty history), with a 95%
/// Wilson interval.
pub fn mode_flip_rate(
    spec: &BoundarySpec,
    theta_d: &[f64],
    theta_d_prime: &[f64],
    strategy: &dyn AdversaryStrategy,
    n_mc: usize,
    seed: u64,
) -> Result<FlipEstimate> {
    for t in [theta_d, theta_d_prime] {
        if t.len() != spec.discrete_dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.discrete_dim(),
                actual: t.len(),
            });
        }
    }
    if strategy.class().context_dim != spec.context_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.context_dim,
            actual: strategy.class().context_dim,
        });
    }
    let est = try_parallel_mean(n_mc, seed, |rng| {
        let z = sample_context(strategy, &History::empty(), rng)?;
        Ok(f64::from(u8::from(
            spec.mode(theta_d, &z.z) != spec.mode(theta_d_prime, &z.z),
        )))
    })?;
    let hits = (est.mean * n_mc as f64).round() as u64;
    let (ci_low, ci_high) = wilson_interval(hits, n_mc as u64, 1.96);
    Ok(FlipEstimate {
        rate: est.mean,
        se: est.se,
        ci_low,
        ci_high,
        samples: n_mc,
    })
}

/// [`parallel_mean`] for fallible samplers; the first error (in chunk order)
/// is returned.
pub(crate) fn try_parallel_mean<F>(n: usize, seed: u64, f: F) -> Result<MeanEstimate>
where
    F: Fn(&mut crate::rng::StreamRng) -> Result<f64> + Sync,
{
    let failure = std::sync::Mutex::new(None::<Error>);
    let est = parallel_mean(n, seed, 0, |rng| match f(rng) {
        Ok(v) => v,
        Err(e) => {
            failure.lock().unwrap().get_or_insert(e);
            0.0
        }
    });
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(est),
    }
}

/// `I[y != sign(x - theta)]` on `z = (x, y)` with `sign(0) = +1`; labels are
/// `+-1` and a nonnegative label counts as `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdLoss {
    space: ParamSpace,
}

impl ThresholdLoss {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        Ok(Self {
            space: ParamSpace::new(vec![lower], vec![upper], 1)?,
        })
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn predict(theta: f64, x: f64) -> bool {
        x >= theta
    }

    /// `(2 / sigma_dir, 1)` for a 1-D directionally smooth class.
    pub fn isometry(&self, class: &SmoothnessClass) -> Result<IsometryConstants> {
        match class.kind {
            SmoothnessKind::DirectionallySmooth { sigma_dir } => Ok(IsometryConstants {
                alpha: 2.0 / sigma_dir,
                beta: 1.0,
            }),
            _ => Err(Error::Unsupported(
                "threshold constants need a directionally smooth class".into(),
            )),
        }
    }
}

impl Loss for ThresholdLoss {
    fn eval(&self, theta: &[f64], z: &Context) -> f64 {
        let positive = z.y() >= 0.0;
        if positive != Self::predict(theta[0], z.z[0]) {
            1.0
        } else {
            0.0
        }
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn context_dim(&self) -> usize {
        1
    }

    fn hypothesis(&self, theta: &[f64], z: &Context) -> Option<f64> {
        Some(if Self::predict(theta[0], z.z[0]) {
            1.0
        } else {
            -1.0
        })
    }

    fn as_threshold(&self) -> Option<&ThresholdLoss> {
        Some(self)
    }
}

/// `2 I[sign(x - theta) != sign(x - theta')]`.
impl PseudoMetric for ThresholdLoss {
    fn rho(&self, a: &[f64], b: &[f64], z: &Context) -> f64 {
        if Self::predict(a[0], z.z[0]) != Self::predict(b[0], z.z[0]) {
            2.0
        } else {
            0.0
        }
    }

    fn diameter_bound(&self) -> f64 {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::{Labeler, UniformBox};
    use proptest::prelude::*;

    fn argmax_1d() -> BoundarySpec {
        BoundarySpec::new(
            2,
            1,
            BoundaryKind::Affine,
            Link::Identity,
            Aggregation::Argmax { margin: 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn argmax_examples() {
        let spec = argmax_1d();
        let theta_d = [1.0, 0.0, -1.0, 0.0];
        assert_eq!(mode_argmax(&spec, &theta_d, &[0.5]), 0);
        assert_eq!(mode_argmax(&spec, &theta_d, &[0.0]), 0);
        let single = BoundarySpec::new(
            1,
            1,
            BoundaryKind::Affine,
            Link::Identity,
            Aggregation::Argmax { margin: 0.0 },
        )
        .unwrap();
        assert_eq!(mode_argmax(&single, &[0.3, 0.1], &[0.5]), 0);
    }

    #[test]
    fn tournament_examples() {
        assert_eq!(tournament_winner(1, |_, _| 0.0), 0);
        let table = |m: [[f64; 3]; 3]| move |k: usize, kp: usize| m[k][kp];
        // phibar(1,2)=0.5, phibar(1,3)=-0.2, phibar(2,3)=0.7 -> wins (1,1,1)
        let a = [[0.0, 0.5, -0.2], [-0.5, 0.0, 0.7], [0.2, -0.7, 0.0]];
        assert_eq!(tournament_winner(3, table(a)), 0);
        // phibar(1,2)=-1, phibar(1,3)=-1, phibar(2,3)=1 -> wins (0,2,1)
        let b = [[0.0, -1.0, -1.0], [1.0, 0.0, 1.0], [1.0, -1.0, 0.0]];
        assert_eq!(tournament_winner(3, table(b)), 1);
    }

    #[test]
    fn tied_match_awards_both() {
        // 0 ties 1, 1 beats 2, 2 beats 0: wins (1, 2, 1)
        let m = [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0], [1.0, -1.0, 0.0]];
        assert_eq!(tournament_winner(3, |k, kp| m[k][kp]), 1);
    }

    #[test]
    fn pair_indices_are_dense() {
        let spec = BoundarySpec::affine_tournament(5, 1).unwrap();
        let mut seen = Vec::new();
        for k in 0..5 {
            for kp in (k + 1)..5 {
                seen.push(spec.pair_index(k, kp));
            }
        }
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    fn regression_env() -> PiecewiseLoss {
        // 2 modes, z in R^2, scalar outputs, one boundary pair
        let boundary = BoundarySpec::affine_tournament(2, 2).unwrap();
        let modes = vec![
            ModeLoss::ClippedSquaredError { out_dim: 1 },
            ModeLoss::ClippedSquaredError { out_dim: 1 },
        ];
        let space = ParamSpace::new(
            vec![-1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0],
            vec![1.0; 7],
            4,
        )
        .unwrap();
        PiecewiseLoss::new(boundary, modes, space).unwrap()
    }

    #[test]
    fn single_mode_constant() {
        let boundary = BoundarySpec::affine_tournament(1, 1).unwrap();
        let loss = PiecewiseLoss::new(
            boundary,
            vec![ModeLoss::Constant { value: 0.3 }],
            ParamSpace::new(vec![], vec![], 0).unwrap(),
        )
        .unwrap();
        assert_eq!(loss.eval(&[], &Context::new(vec![0.7])), 0.3);
    }

    #[test]
    fn non_lipschitz_witness() {
        let loss = regression_env();
        let z = Context::labeled(vec![0.5, 0.5], vec![0.5]);
        // mode 0 fits exactly, mode 1 predicts -1; boundary passes through z
        let w = std::f64::consts::FRAC_1_SQRT_2;
        let base = [0.5, 0.5, -1.0, -1.0];
        let a: Vec<f64> = base.iter().copied().chain([w, -w, 1e-9]).collect();
        let b: Vec<f64> = base.iter().copied().chain([w, -w, -1e-9]).collect();
        let jump = (loss.eval(&a, &z) - loss.eval(&b, &z)).abs();
        assert!(jump > 0.5);
        assert!(l1_unchecked(&a, &b) < 1e-8);
    }

    #[test]
    fn planted_regression_is_zero() {
        let loss = regression_env();
        let w = std::f64::consts::FRAC_1_SQRT_2;
        // mode 0 when z0 >= z1 with W0 = (1, -1); mode 1 otherwise with W1 = (0.5, 0.5)
        let theta = [1.0, -1.0, 0.5, 0.5, w, -w, 0.0];
        let mut rng = crate::rng::stream(8, 0);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..2).map(|_| crate::rng::uniform_in(&mut rng, -1.0, 1.0)).collect();
            let y = if x[0] >= x[1] { x[0] - x[1] } else { 0.5 * (x[0] + x[1]) };
            assert!(loss.eval(&theta, &Context::labeled(x, vec![y])) < 1e-30);
        }
    }

    #[test]
    fn rho_examples() {
        let loss = regression_env();
        let z = Context::labeled(vec![0.5, 0.2], vec![0.0]);
        let w = std::f64::consts::FRAC_1_SQRT_2;
        let a = [0.1, 0.2, 0.3, 0.4, w, -w, 0.0];
        assert_eq!(rho_pwa(&loss, &a, &a, &z), 0.0);
        let mut b = a;
        b[0] += 0.1;
        b[1] -= 0.2;
        b[2] += 0.05;
        assert!((rho_pwa(&loss, &a, &b, &z) - 0.3).abs() < 1e-12);
        let mut c = a;
        c[4] = -w;
        c[5] = w;
        assert_eq!(rho_pwa(&loss, &a, &c, &z), 2.0);
        assert_eq!(loss.diameter_bound(), 6.0);
    }

    #[test]
    fn isometry_constant_examples() {
        let loss = regression_env();
        let class = SmoothnessClass::directional(2, 0.5, 1.0).unwrap();
        assert_eq!(
            pseudo_isometry_constants(&loss, &class).unwrap(),
            IsometryConstants { alpha: 4.0, beta: 1.0 }
        );

        let poly = PiecewiseLoss::new(
            BoundarySpec::new(
                2,
                1,
                BoundaryKind::Polynomial { degree: 2 },
                Link::Identity,
                Aggregation::Tournament,
            )
            .unwrap(),
            vec![ModeLoss::Constant { value: 0.0 }, ModeLoss::Constant { value: 1.0 }],
            ParamSpace::new(vec![-1.0 / 3.0; 3], vec![0.0; 3], 0).unwrap(),
        )
        .unwrap();
        let pclass = SmoothnessClass::new(
            SmoothnessKind::PolynomiallySmooth {
                degree: 2,
                sigma_poly: 1.0,
            },
            1,
            1.0,
        )
        .unwrap();
        assert_eq!(poly.space().l1_diameter(), 1.0);
        assert_eq!(
            pseudo_isometry_constants(&poly, &pclass).unwrap(),
            IsometryConstants { alpha: 2.0, beta: 0.5 }
        );

        let margin = PiecewiseLoss::new(
            BoundarySpec::new(
                2,
                1,
                BoundaryKind::Affine,
                Link::Identity,
                Aggregation::Argmax { margin: 1.0 },
            )
            .unwrap(),
            vec![ModeLoss::Constant { value: 0.0 }, ModeLoss::Constant { value: 1.0 }],
            ParamSpace::new(vec![-1.0; 4], vec![1.0; 4], 0).unwrap(),
        )
        .unwrap();
        let mclass = SmoothnessClass::directional(1, 1.0, 1.0).unwrap();
        assert_eq!(
            pseudo_isometry_constants(&margin, &mclass).unwrap(),
            IsometryConstants { alpha: 4.0, beta: 1.0 }
        );
        assert!(pseudo_isometry_constants(&margin, &pclass).is_err());
    }

    #[test]
    fn margin_examples() {
        let single = BoundarySpec::new(
            1,
            2,
            BoundaryKind::Affine,
            Link::Identity,
            Aggregation::Argmax { margin: 0.1 },
        )
        .unwrap();
        assert_eq!(margin_check(&single, &[1.0, 0.0, 0.0]).unwrap().gamma, f64::INFINITY);
        let two = BoundarySpec::new(
            2,
            2,
            BoundaryKind::Affine,
            Link::Identity,
            Aggregation::Argmax { margin: 0.1 },
        )
        .unwrap();
        let r = margin_check(&two, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((r.gamma - 2f64.sqrt()).abs() < 1e-15);
        assert!(!r.violated);
        let r = margin_check(&two, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.gamma, 0.0);
        assert!(r.violated);
    }

    fn threshold_boundary(theta: f64) -> Vec<f64> {
        let mut w = vec![1.0, -theta];
        let spec = BoundarySpec::affine_tournament(2, 1).unwrap();
        spec.normalize_blocks(&mut w);
        w
    }

    #[test]
    fn flip_rate_examples() {
        let spec = BoundarySpec::affine_tournament(2, 1).unwrap();
        let uniform = UniformBox::unit(1, Labeler::None).unwrap();
        let a = threshold_boundary(0.3);
        assert_eq!(mode_flip_rate(&spec, &a, &a, &uniform, 10_000, 1).unwrap().rate, 0.0);
        let b = threshold_boundary(0.45);
        let est = mode_flip_rate(&spec, &a, &b, &uniform, 100_000, 2).unwrap();
        assert!((est.rate - 0.15).abs() < 4.0 * est.se, "{est:?}");
        assert!(est.ci_low <= 0.15 && 0.15 <= est.ci_high);
    }

    #[test]
    fn threshold_loss_values() {
        let loss = ThresholdLoss::new(0.0, 1.0).unwrap();
        let pos = Context::labeled(vec![0.5], vec![1.0]);
        assert_eq!(loss.eval(&[0.5], &pos), 0.0);
        assert_eq!(loss.eval(&[0.6], &pos), 1.0);
        assert_eq!(loss.rho(&[0.4], &[0.6], &pos), 2.0);
        assert_eq!(loss.rho(&[0.1], &[0.2], &pos), 0.0);
        assert_eq!(loss.hypothesis(&[0.5], &pos), Some(1.0));
    }

    fn random_spec_theta(
        modes: usize,
        seed: u64,
        aggregation: Aggregation,
    ) -> (BoundarySpec, Vec<f64>, crate::rng::StreamRng) {
        let spec = BoundarySpec::new(modes, 2, BoundaryKind::Affine, Link::Identity, aggregation)
            .unwrap();
        let mut rng = crate::rng::stream(seed, 0);
        let theta_d = (0..spec.discrete_dim())
            .map(|_| crate::rng::uniform_in(&mut rng, -1.0, 1.0))
            .collect();
        (spec, theta_d, rng)
    }

    proptest! {
        #[test]
        fn rho_is_a_pseudometric(seed in any::<u64>()) {
            let loss = regression_env();
            let mut rng = crate::rng::stream(seed, 0);
            let p = |rng: &mut crate::rng::StreamRng| loss.normalized(&loss.space().sample_uniform(rng));
            let (a, b, c) = (p(&mut rng), p(&mut rng), p(&mut rng));
            let z = Context::labeled(
                vec![crate::rng::uniform_in(&mut rng, -1.0, 1.0), crate::rng::uniform_in(&mut rng, -1.0, 1.0)],
                vec![crate::rng::uniform_in(&mut rng, -1.0, 1.0)],
            );
            let ab = loss.rho(&a, &b, &z);
            prop_assert_eq!(ab, loss.rho(&b, &a, &z));
            prop_assert_eq!(loss.rho(&a, &a, &z), 0.0);
            prop_assert!(ab <= loss.rho(&a, &c, &z) + loss.rho(&c, &b, &z) + 1e-12);
            prop_assert!(ab <= loss.diameter_bound());
            let (la, lb) = (loss.eval(&a, &z), loss.eval(&b, &z));
            prop_assert!((0.0..=1.0).contains(&la));
            prop_assert!(la - lb <= ab + 1e-12);
        }

        #[test]
        fn link_does_not_change_argmax(seed in any::<u64>(), c in 0.0f64..3.0) {
            let (spec, theta_d, mut rng) = random_spec_theta(4, seed, Aggregation::Argmax { margin: 0.0 });
            let linked = BoundarySpec::new(4, 2, BoundaryKind::Affine, Link::TanhPlus { c }, Aggregation::Argmax { margin: 0.0 }).unwrap();
            let z = [crate::rng::uniform_in(&mut rng, -1.0, 1.0), crate::rng::uniform_in(&mut rng, -1.0, 1.0)];
            prop_assert_eq!(mode_argmax(&spec, &theta_d, &z), mode_argmax(&linked, &theta_d, &z));
        }

        #[test]
        fn tournament_matches_tally(seed in any::<u64>(), modes in 1usize..6) {
            let (spec, theta_d, mut rng) = random_spec_theta(modes, seed, Aggregation::Tournament);
            let z = [crate::rng::uniform_in(&mut rng, -1.0, 1.0), crate::rng::uniform_in(&mut rng, -1.0, 1.0)];
            let mut wins = vec![0; modes];
            for k in 0..modes {
                for kp in 0..modes {
                    if k != kp && spec.phi_bar(&theta_d, k, kp, &z) >= spec.phi_bar(&theta_d, kp, k, &z) {
                        wins[k] += 1;
                    }
                }
            }
            let max = *wins.iter().max().unwrap();
            let want = wins.iter().position(|w| *w == max).unwrap();
            prop_assert_eq!(mode_tournament(&spec, &theta_d, &z), want);
        }

        #[test]
        fn mode_losses_are_one_lipschitz(seed in any::<u64>()) {
            let m = ModeLoss::ClippedSquaredError { out_dim: 2 };
            let mut rng = crate::rng::stream(seed, 0);
            let mut u = |lo: f64, hi: f64| crate::rng::uniform_in(&mut rng, lo, hi);
            let z = Context::labeled(vec![u(-1.0, 1.0), u(-1.0, 1.0)], vec![u(-1.0, 1.0), u(-1.0, 1.0)]);
            let a: Vec<f64> = (0..4).map(|_| u(-1.0, 1.0)).collect();
            let b: Vec<f64> = a.iter().map(|x| x + u(-1e-3, 1e-3)).collect();
            let diff = (m.eval(&a, &z) - m.eval(&b, &z)).abs();
            prop_assert!(diff <= l1_unchecked(&a, &b) * (1.0 + 1e-6) + 1e-15);
        }
    }
}
