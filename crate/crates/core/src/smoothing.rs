//! Constrained adversaries and empirical smoothness estimators.
//!
//! Every built-in strategy declares the smoothness class it belongs to, with
//! the constant derived analytically from its noise law:
//!
//! * uniform on a box of sides `s_i`: every projection density is at most
//!   `sqrt(2) / min s_i` in dimension `>= 2` (cube slicing), `1 / s` in 1-D;
//! * uniform on a ball of radius `R`: the peak projection density is
//!   `omega_{d-1} / (omega_d R)` with `omega_d` the unit-ball volume;
//! * independent truncated Gaussian coordinates with 1-D peak density `q`:
//!   any unit direction has a coordinate of weight `>= 1/sqrt(d)`, so the
//!   projection density is at most `q sqrt(d)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::polynomial::Polynomial;
use crate::rng::{standard_normal, uniform_in, unit_vector, StreamRng};
use crate::space::{Context, Loss, ParamPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothnessKind {
    /// Likelihood ratio to a named base measure bounded by `1 / sigma`.
    Smooth { sigma: f64, base: String },
    /// Every 1-D projection has density at most `1 / sigma_dir`.
    DirectionallySmooth { sigma_dir: f64 },
    /// Degree-`degree` polynomials with unit top coefficients anti-concentrate.
    PolynomiallySmooth { degree: u32, sigma_poly: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessClass {
    pub kind: SmoothnessKind,
    pub context_dim: usize,
    pub sup_bound: f64,
}

impl SmoothnessClass {
    pub fn new(kind: SmoothnessKind, context_dim: usize, sup_bound: f64) -> Result<Self> {
        match &kind {
            SmoothnessKind::Smooth { sigma, .. } => {
                if !(*sigma > 0.0 && *sigma <= 1.0) {
                    return Err(invalid("sigma", format!("{sigma} not in (0, 1]")));
                }
            }
            SmoothnessKind::DirectionallySmooth { sigma_dir } => {
                if !(*sigma_dir > 0.0) || !sigma_dir.is_finite() {
                    return Err(invalid("sigma_dir", format!("{sigma_dir} must be positive")));
                }
            }
            SmoothnessKind::PolynomiallySmooth { degree, sigma_poly } => {
                if *degree == 0 {
                    return Err(invalid("degree", "must be at least 1"));
                }
                if !(*sigma_poly > 0.0) || !sigma_poly.is_finite() {
                    return Err(invalid("sigma_poly", format!("{sigma_poly} must be positive")));
                }
            }
        }
        if !(sup_bound > 0.0) || !sup_bound.is_finite() {
            return Err(invalid("sup_bound", format!("{sup_bound} must be positive")));
        }
        Ok(Self {
            kind,
            context_dim,
            sup_bound,
        })
    }

    pub fn directional(context_dim: usize, sigma_dir: f64, sup_bound: f64) -> Result<Self> {
        Self::new(
            SmoothnessKind::DirectionallySmooth { sigma_dir },
            context_dim,
            sup_bound,
        )
    }

    pub fn sigma_dir(&self) -> Option<f64> {
        match self.kind {
            SmoothnessKind::DirectionallySmooth { sigma_dir } => Some(sigma_dir),
            _ => None,
        }
    }
}

/// What the adversary has seen so far: contexts `z_1..z_{t-1}` and the
/// learner's played parameters `theta_1..theta_{t-1}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct History<'a> {
    pub contexts: &'a [Context],
    pub thetas: &'a [ParamPoint],
}

impl<'a> History<'a> {
    pub fn new(contexts: &'a [Context], thetas: &'a [ParamPoint]) -> Self {
        Self { contexts, thetas }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// 1-based index of the step about to be sampled.
    pub fn step(&self) -> usize {
        self.contexts.len() + 1
    }
}

pub trait AdversaryStrategy: Send + Sync {
    fn class(&self) -> &SmoothnessClass;

    fn name(&self) -> &str;

    /// Draw `z_t` from the strategy's law given the history. Callers should
    /// go through [`sample_context`], which enforces the declared bound.
    fn draw(&self, history: &History<'_>, rng: &mut StreamRng) -> Context;
}

/// One sample from `strategy`, checked against its declared class.
pub fn sample_context(
    strategy: &dyn AdversaryStrategy,
    history: &History<'_>,
    rng: &mut StreamRng,
) -> Result<Context> {
    let z = strategy.draw(history, rng);
    let class = strategy.class();
    if z.z.len() != class.context_dim {
        return Err(Error::DimensionMismatch {
            expected: class.context_dim,
            actual: z.z.len(),
        });
    }
    let norm = z.sup_norm();
    if !(norm <= class.sup_bound) {
        return Err(Error::ContextOutOfBound {
            norm,
            bound: class.sup_bound,
        });
    }
    Ok(z)
}

/// Attaches labels to feature vectors for supervised environments.
#[derive(Clone, Default)]
pub enum Labeler {
    #[default]
    None,
    /// `y = +1` if `x_0 >= cut` else `-1`, flipped with probability `flip_prob`.
    Threshold { cut: f64, flip_prob: f64 },
    /// Arbitrary labeling rule; the noiseless rule is used by greedy adversaries.
    Custom(Arc<dyn Fn(&[f64], Option<&mut StreamRng>) -> Vec<f64> + Send + Sync>),
}

impl std::fmt::Debug for Labeler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Labeler::None => write!(f, "None"),
            Labeler::Threshold { cut, flip_prob } => f
                .debug_struct("Threshold")
                .field("cut", cut)
                .field("flip_prob", flip_prob)
                .finish(),
            Labeler::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Labeler {
    pub fn label(&self, x: Vec<f64>, rng: &mut StreamRng) -> Context {
        match self {
            Labeler::None => Context::new(x),
            Labeler::Threshold { cut, flip_prob } => {
                let mut y = if x[0] >= *cut { 1.0 } else { -1.0 };
                if *flip_prob > 0.0 && rng.random::<f64>() < *flip_prob {
                    y = -y;
                }
                Context::labeled(x, vec![y])
            }
            Labeler::Custom(f) => {
                let y = f(&x, Some(rng));
                Context::labeled(x, y)
            }
        }
    }

    pub fn noiseless(&self, x: Vec<f64>) -> Context {
        match self {
            Labeler::None => Context::new(x),
            Labeler::Threshold { cut, .. } => {
                let y = if x[0] >= *cut { 1.0 } else { -1.0 };
                Context::labeled(x, vec![y])
            }
            Labeler::Custom(f) => {
                let y = f(&x, None);
                Context::labeled(x, y)
            }
        }
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.len() != upper.len() {
        return Err(Error::DimensionMismatch {
            expected: lower.len(),
            actual: upper.len(),
        });
    }
    if lower.is_empty() {
        return Err(invalid("box", "context dimension must be at least 1"));
    }
    for (lo, hi) in lower.iter().zip(upper) {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid("box", format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn sup_of_box(lower: &[f64], upper: &[f64]) -> f64 {
    lower
        .iter()
        .chain(upper)
        .fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Directional smoothness of the uniform law on a box with the given sides.
pub fn uniform_box_sigma_dir(sides: &[f64]) -> f64 {
    let s_min = sides.iter().copied().fold(f64::INFINITY, f64::min);
    if sides.len() == 1 {
        s_min
    } else {
        s_min / std::f64::consts::SQRT_2
    }
}

/// `omega_{d-1} / omega_d` for unit-ball volumes.
fn ball_section_ratio(d: usize) -> f64 {
    match d {
        0 => f64::NAN,
        1 => 0.5,
        2 => 2.0 / PI,
        _ => d as f64 / (d as f64 - 1.0) * ball_section_ratio(d - 2),
    }
}

/// Directional smoothness of the uniform law on a `d`-ball of radius `r`.
pub fn uniform_ball_sigma_dir(d: usize, radius: f64) -> f64 {
    radius / ball_section_ratio(d)
}

#[derive(Debug, Clone)]
pub struct UniformBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
    labeler: Labeler,
    class: SmoothnessClass,
}

impl UniformBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, labeler: Labeler) -> Result<Self> {
        check_box(&lower, &upper)?;
        let sides: Vec<f64> = lower.iter().zip(&upper).map(|(l, h)| h - l).collect();
        let class = SmoothnessClass::directional(
            lower.len(),
            uniform_box_sigma_dir(&sides),
            sup_of_box(&lower, &upper),
        )?;
        Ok(Self {
            lower,
            upper,
            labeler,
            class,
        })
    }

    pub fn unit(dim: usize, labeler: Labeler) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim], labeler)
    }
}

impl AdversaryStrategy for UniformBox {
    fn class(&self) -> &SmoothnessClass {
        &self.class
    }

    fn name(&self) -> &str {
        "uniform_box"
    }

    fn draw(&self, _history: &History<'_>, rng: &mut StreamRng) -> Context {
        let x = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| uniform_in(rng, *lo, *hi))
            .collect();
        self.labeler.label(x, rng)
    }
}

#[derive(Debug, Clone)]
pub struct UniformBall {
    center: Vec<f64>,
    radius: f64,
    labeler: Labeler,
    class: SmoothnessClass,
}

impl UniformBall {
    pub fn new(center: Vec<f64>, radius: f64, labeler: Labeler) -> Result<Self> {
        if center.is_empty() {
            return Err(invalid("center", "context dimension must be at least 1"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid("radius", format!("{radius} must be positive")));
        }
        let sup = center.iter().fold(0.0_f64, |a, c| a.max(c.abs())) + radius;
        let class = SmoothnessClass::directional(
            center.len(),
            uniform_ball_sigma_dir(center.len(), radius),
            sup,
        )?;
        Ok(Self {
            center,
            radius,
            labeler,
            class,
        })
    }
}

impl AdversaryStrategy for UniformBall {
    fn class(&self) -> &SmoothnessClass {
        &self.class
    }

    fn name(&self) -> &str {
        "uniform_ball"
    }

    fn draw(&self, _history: &History<'_>, rng: &mut StreamRng) -> Context {
        let d = self.center.len();
        let dir = unit_vector(rng, d);
        let r = self.radius * rng.random::<f64>().powf(1.0 / d as f64);
        let x = self
            .center
            .iter()
            .zip(dir)
            .map(|(c, u)| c + r * u)
            .collect();
        self.labeler.label(x, rng)
    }
}

/// Per-coordinate noise added to an adversarial mean. Both laws are supported
/// on `[-width/2, width/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLaw {
    Uniform,
    TruncatedGaussian { std: f64 },
}

impl NoiseLaw {
    /// Peak of the 1-D noise density for a window of the given width.
    pub fn peak_density(&self, width: f64) -> f64 {
        match *self {
            NoiseLaw::Uniform => 1.0 / width,
            NoiseLaw::TruncatedGaussian { std } => {
                let mass = statrs::function::erf::erf(width / (2.0 * std * std::f64::consts::SQRT_2));
                1.0 / (std * (2.0 * PI).sqrt() * mass)
            }
        }
    }

    pub fn sigma_dir(&self, width: f64, dim: usize) -> f64 {
        match self {
            NoiseLaw::Uniform => uniform_box_sigma_dir(&vec![width; dim]),
            NoiseLaw::TruncatedGaussian { .. } => {
                1.0 / (self.peak_density(width) * (dim as f64).sqrt())
            }
        }
    }

    pub(crate) fn sample(&self, width: f64, rng: &mut StreamRng) -> f64 {
        let half = 0.5 * width;
        match *self {
            NoiseLaw::Uniform => uniform_in(rng, -half, half),
            NoiseLaw::TruncatedGaussian { std } => loop {
                let x = std * standard_normal(rng);
                if x.abs() <= half {
                    return x;
                }
            },
        }
    }
}

/// How the mean-shift adversary moves its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanPolicy {
    Fixed { mean: Vec<f64> },
    /// `center + amplitude * sin(2 pi t / period)` on every coordinate.
    Sinusoid { amplitude: f64, period: f64 },
    /// Track the learner's last played parameter (coordinates reused cyclically).
    ChaseLearner,
}

/// Adaptive mean plus bounded noise. The mean is clamped so the noise window
/// stays inside the box; samples are never clipped.
#[derive(Debug, Clone)]
pub struct MeanShift {
    lower: Vec<f64>,
    upper: Vec<f64>,
    width: f64,
    noise: NoiseLaw,
    policy: MeanPolicy,
    labeler: Labeler,
    class: SmoothnessClass,
}

impl MeanShift {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        width: f64,
        noise: NoiseLaw,
        policy: MeanPolicy,
        labeler: Labeler,
    ) -> Result<Self> {
        check_box(&lower, &upper)?;
        let min_side = lower
            .iter()
            .zip(&upper)
            .map(|(l, h)| h - l)
            .fold(f64::INFINITY, f64::min);
        if !(width > 0.0 && width <= min_side) {
            return Err(invalid(
                "width",
                format!("{width} must lie in (0, {min_side}] to fit the box"),
            ));
        }
        if let NoiseLaw::TruncatedGaussian { std } = noise {
            if !(std > 0.0) {
                return Err(invalid("std", "must be positive"));
            }
        }
        if let MeanPolicy::Fixed { mean } = &policy {
            if mean.len() != lower.len() {
                return Err(Error::DimensionMismatch {
                    expected: lower.len(),
                    actual: mean.len(),
                });
            }
        }
        if let MeanPolicy::Sinusoid { period, .. } = &policy {
            if !(*period > 0.0) {
                return Err(invalid("period", "must be positive"));
            }
        }
        let class = SmoothnessClass::directional(
            lower.len(),
            noise.sigma_dir(width, lower.len()),
            sup_of_box(&lower, &upper),
        )?;
        Ok(Self {
            lower,
            upper,
            width,
            noise,
            policy,
            labeler,
            class,
        })
    }

    fn clamp_mean(&self, mean: &mut [f64]) {
        let half = 0.5 * self.width;
        for ((m, lo), hi) in mean.iter_mut().zip(&self.lower).zip(&self.upper) {
            *m = m.clamp(lo + half, hi - half);
        }
    }

    pub fn mean_at(&self, history: &History<'_>) -> Vec<f64> {
        let center: Vec<f64> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        let mut mean = match &self.policy {
            MeanPolicy::Fixed { mean } => mean.clone(),
            MeanPolicy::Sinusoid { amplitude, period } => {
                let s = amplitude * (2.0 * PI * history.step() as f64 / period).sin();
                center.iter().map(|c| c + s).collect()
            }
            MeanPolicy::ChaseLearner => match history.thetas.last() {
                Some(theta) if !theta.is_empty() => (0..center.len())
                    .map(|i| theta[i % theta.len()])
                    .collect(),
                _ => center,
            },
        };
        self.clamp_mean(&mut mean);
        mean
    }
}

impl AdversaryStrategy for MeanShift {
    fn class(&self) -> &SmoothnessClass {
        &self.class
    }

    fn name(&self) -> &str {
        "mean_shift"
    }

    fn draw(&self, history: &History<'_>, rng: &mut StreamRng) -> Context {
        let mean = self.mean_at(history);
        let x = mean
            .into_iter()
            .map(|m| m + self.noise.sample(self.width, rng))
            .collect();
        self.labeler.label(x, rng)
    }
}

/// Picks, among a grid of candidate means, the one maximizing the learner's
/// current loss on the noiseless label, then adds uniform noise.
pub struct GreedyMeanShift {
    lower: Vec<f64>,
    upper: Vec<f64>,
    width: f64,
    candidates: Vec<Vec<f64>>,
    loss: Arc<dyn Loss>,
    labeler: Labeler,
    class: SmoothnessClass,
}

impl GreedyMeanShift {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        width: f64,
        grid_per_dim: usize,
        loss: Arc<dyn Loss>,
        labeler: Labeler,
    ) -> Result<Self> {
        let base = MeanShift::new(
            lower.clone(),
            upper.clone(),
            width,
            NoiseLaw::Uniform,
            MeanPolicy::ChaseLearner,
            Labeler::None,
        )?;
        if grid_per_dim == 0 {
            return Err(invalid("grid_per_dim", "must be at least 1"));
        }
        let total = (grid_per_dim as f64).powi(lower.len() as i32);
        if total > 1e5 {
            return Err(Error::GridTooLarge {
                points: total,
                limit: 1e5,
            });
        }
        let half = 0.5 * width;
        let axes: Vec<Vec<f64>> = lower
            .iter()
            .zip(&upper)
            .map(|(lo, hi)| {
                let (a, b) = (lo + half, hi - half);
                if grid_per_dim == 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..grid_per_dim)
                        .map(|i| a + (b - a) * (i as f64 / (grid_per_dim - 1) as f64))
                        .collect()
                }
            })
            .collect();
        let mut candidates = vec![Vec::new()];
        for axis in &axes {
            candidates = candidates
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        Ok(Self {
            lower,
            upper,
            width,
            candidates,
            loss,
            labeler,
            class: base.class,
        })
    }

    pub fn mean_at(&self, history: &History<'_>) -> Vec<f64> {
        let Some(theta) = history.thetas.last() else {
            return self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(l, h)| 0.5 * (l + h))
                .collect();
        };
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, c) in self.candidates.iter().enumerate() {
            let v = self.loss.eval(theta, &self.labeler.noiseless(c.clone()));
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        self.candidates[best].clone()
    }
}

impl AdversaryStrategy for GreedyMeanShift {
    fn class(&self) -> &SmoothnessClass {
        &self.class
    }

    fn name(&self) -> &str {
        "greedy_mean_shift"
    }

    fn draw(&self, history: &History<'_>, rng: &mut StreamRng) -> Context {
        let half = 0.5 * self.width;
        let x = self
            .mean_at(history)
            .into_iter()
            .map(|m| m + uniform_in(rng, -half, half))
            .collect();
        self.labeler.label(x, rng)
    }
}

/// A deterministic context. Only admissible for the `Smooth` kind, where it is
/// 1-smooth with respect to itself as base measure.
#[derive(Debug, Clone)]
pub struct PointMass {
    point: Context,
    class: SmoothnessClass,
}

impl PointMass {
    pub fn new(point: Context, class: SmoothnessClass) -> Result<Self> {
        match class.kind {
            SmoothnessKind::Smooth { .. } => {}
            _ => {
                return Err(Error::StrategyRejected(
                    "a point mass has unbounded projection densities and cannot be directionally or polynomially smooth".into(),
                ))
            }
        }
        if point.z.len() != class.context_dim {
            return Err(Error::DimensionMismatch {
                expected: class.context_dim,
                actual: point.z.len(),
            });
        }
        Ok(Self { point, class })
    }
}

impl AdversaryStrategy for PointMass {
    fn class(&self) -> &SmoothnessClass {
        &self.class
    }

    fn name(&self) -> &str {
        "point_mass"
    }

    fn draw(&self, _history: &History<'_>, _rng: &mut StreamRng) -> Context {
        self.point.clone()
    }
}

pub const MIN_ESTIMATOR_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalEstimate {
    pub sigma_dir: f64,
    /// Histogram bin width along the worst direction.
    pub bin_width: f64,
    pub worst_direction: usize,
    pub degenerate: bool,
}

/// Coordinate axes, the all-ones diagonal and its sign flip in the first two
/// coordinates, plus `n_random` uniformly random unit vectors.
pub fn sample_directions(dim: usize, n_random: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        out.push(e);
    }
    if dim >= 2 {
        let s = 1.0 / (dim as f64).sqrt();
        out.push(vec![s; dim]);
        let mut flip = vec![s; dim];
        flip[1] = -s;
        out.push(flip);
    }
    out.extend((0..n_random).map(|_| unit_vector(rng, dim)));
    out
}

/// `1 / max_u sup density(<u, z>)`, with densities from equal-width
/// histograms of `n_bins` bins (default `ceil(N^{1/3})`).
pub fn estimate_directional_smoothness(
    samples: &[Context],
    directions: &[Vec<f64>],
    n_bins: Option<usize>,
) -> Result<DirectionalEstimate> {
    if samples.len() < MIN_ESTIMATOR_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {MIN_ESTIMATOR_SAMPLES}",
            samples.len()
        )));
    }
    if directions.is_empty() {
        return Err(invalid("directions", "need at least one direction"));
    }
    let dim = samples[0].z.len();
    let n = samples.len();
    let bins = n_bins.unwrap_or_else(|| (n as f64).cbrt().ceil() as usize).max(1);
    let mut worst = DirectionalEstimate {
        sigma_dir: f64::INFINITY,
        bin_width: 0.0,
        worst_direction: 0,
        degenerate: false,
    };
    let mut peak_max = 0.0;
    let mut proj = Vec::with_capacity(n);
    for (di, u) in directions.iter().enumerate() {
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: u.len(),
            });
        }
        proj.clear();
        proj.extend(
            samples
                .iter()
                .map(|s| s.z.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()),
        );
        let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if !(range > 0.0) {
            return Ok(DirectionalEstimate {
                sigma_dir: 0.0,
                bin_width: 0.0,
                worst_direction: di,
                degenerate: true,
            });
        }
        let width = range / bins as f64;
        let mut counts = vec![0usize; bins];
        for p in &proj {
            let b = (((p - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let peak = *counts.iter().max().unwrap_or(&0) as f64 / (n as f64 * width);
        if peak > peak_max {
            peak_max = peak;
            worst.bin_width = width;
            worst.worst_direction = di;
        }
    }
    worst.sigma_dir = 1.0 / peak_max;
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialEstimate {
    pub sigma_poly: f64,
    pub worst_polynomial: usize,
    pub worst_epsilon: f64,
    pub degenerate: bool,
}

/// `min over (f, a, eps) of eps^{1/r} / P(|f(z) - a| <= eps)`, where the
/// supremum over `a` is exact: a sliding window over the sorted values finds
/// the densest interval of length `2 eps`.
pub fn estimate_polynomial_smoothness(
    samples: &[Context],
    degree: u32,
    polynomials: &[Polynomial],
    epsilon_grid: &[f64],
) -> Result<PolynomialEstimate> {
    if samples.len() < MIN_ESTIMATOR_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {MIN_ESTIMATOR_SAMPLES}",
            samples.len()
        )));
    }
    if degree == 0 {
        return Err(invalid("degree", "must be at least 1"));
    }
    if polynomials.is_empty() || epsilon_grid.is_empty() {
        return Err(invalid("polynomials", "need at least one polynomial and one epsilon"));
    }
    for p in polynomials {
        if p.degree() != degree {
            return Err(invalid(
                "polynomials",
                format!("degree {} differs from r = {degree}", p.degree()),
            ));
        }
        let norm = p.coeff_top_norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "polynomials",
                format!("top-degree coefficient norm {norm} is not 1"),
            ));
        }
    }
    if epsilon_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("epsilon_grid", "entries must be positive"));
    }
    let n = samples.len() as f64;
    let mut best = PolynomialEstimate {
        sigma_poly: f64::INFINITY,
        worst_polynomial: 0,
        worst_epsilon: epsilon_grid[0],
        degenerate: false,
    };
    for (pi, p) in polynomials.iter().enumerate() {
        let mut values: Vec<f64> = samples.iter().map(|s| p.eval(&s.z)).collect();
        values.sort_by(f64::total_cmp);
        if values[0] == values[values.len() - 1] {
            return Ok(PolynomialEstimate {
                sigma_poly: 0.0,
                worst_polynomial: pi,
                worst_epsilon: 0.0,
                degenerate: true,
            });
        }
        for &eps in epsilon_grid {
            let mut max_count = 0usize;
            let mut j = 0;
            for i in 0..values.len() {
                while values[i] - values[j] > 2.0 * eps {
                    j += 1;
                }
                max_count = max_count.max(i - j + 1);
            }
            let ratio = eps.powf(1.0 / degree as f64) / (max_count as f64 / n);
            if ratio < best.sigma_poly {
                best.sigma_poly = ratio;
                best.worst_polynomial = pi;
                best.worst_epsilon = eps;
            }
        }
    }
    Ok(best)
}
