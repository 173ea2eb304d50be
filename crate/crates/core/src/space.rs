//! Parameter spaces, contexts, and the loss / pseudo-metric interfaces shared
//! by every environment.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::uniform_in;

/// Axis-aligned box `Theta = [lower, upper]`, split into a continuous block
/// followed by a discrete (boundary-weight) block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    dim_continuous: usize,
    l1_diameter: f64,
    linf_bound: f64,
}

impl ParamSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, dim_continuous: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if dim_continuous > lower.len() {
            return Err(invalid(
                "dim_continuous",
                format!("{dim_continuous} exceeds total dimension {}", lower.len()),
            ));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(invalid("box", format!("coordinate {i} is not finite")));
            }
            if lo > hi {
                return Err(invalid("box", format!("lower[{i}] = {lo} > upper[{i}] = {hi}")));
            }
        }
        let l1_diameter = lower.iter().zip(&upper).map(|(lo, hi)| hi - lo).sum();
        let linf_bound = lower
            .iter()
            .chain(&upper)
            .fold(0.0_f64, |acc, x| acc.max(x.abs()));
        Ok(Self {
            lower,
            upper,
            dim_continuous,
            l1_diameter,
            linf_bound,
        })
    }

    /// `[lo, hi]^dim`, all coordinates continuous.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], dim)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn dim_continuous(&self) -> usize {
        self.dim_continuous
    }

    pub fn dim_discrete(&self) -> usize {
        self.dim() - self.dim_continuous
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Sum of coordinate ranges, i.e. the sup of `|a - b|_1` over the box.
    pub fn l1_diameter(&self) -> f64 {
        self.l1_diameter
    }

    pub fn linf_bound(&self) -> f64 {
        self.linf_bound
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }

    pub fn center(&self) -> ParamPoint {
        ParamPoint(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamPoint {
        ParamPoint(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| uniform_in(rng, *lo, *hi))
                .collect(),
        )
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<ParamPoint> {
        if coords.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: coords.len(),
            });
        }
        if !self.contains(&coords) {
            return Err(invalid("point", "coordinates outside the parameter box"));
        }
        Ok(ParamPoint(coords))
    }

    pub fn continuous<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[..self.dim_continuous]
    }

    pub fn discrete<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.dim_continuous..]
    }
}

/// A parameter vector `theta = (theta_c, theta_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint(pub Vec<f64>);

impl ParamPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamPoint {
    fn from(v: Vec<f64>) -> Self {
        ParamPoint(v)
    }
}

/// One context `z_t`, optionally carrying a label block for supervised
/// environments (`z = (x, y)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Vec<f64>>,
}

impl Context {
    pub fn new(z: Vec<f64>) -> Self {
        Self { z, label: None }
    }

    pub fn labeled(z: Vec<f64>, label: Vec<f64>) -> Self {
        Self {
            z,
            label: Some(label),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.z.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// First label coordinate, or 0 when unlabeled.
    pub fn y(&self) -> f64 {
        self.label.as_ref().and_then(|l| l.first().copied()).unwrap_or(0.0)
    }

    pub fn digest(&self) -> u64 {
        let mut all = self.z.clone();
        if let Some(l) = &self.label {
            all.extend_from_slice(l);
        }
        crate::rng::digest(&all)
    }
}

/// A loss `l: Theta x Z -> [0, 1]`.
pub trait Loss: Send + Sync {
    fn eval(&self, theta: &[f64], z: &Context) -> f64;

    fn param_dim(&self) -> usize;

    fn context_dim(&self) -> usize;

    /// Prediction `f_theta(x)` used by function-space perturbations; `None`
    /// when the loss has no hypothesis view.
    fn hypothesis(&self, _theta: &[f64], _z: &Context) -> Option<f64> {
        None
    }

    fn as_piecewise(&self) -> Option<&crate::pwa_env::PiecewiseLoss> {
        None
    }

    fn as_threshold(&self) -> Option<&crate::pwa_env::ThresholdLoss> {
        None
    }
}

/// A `Z`-parameterized pseudo-metric on `Theta`.
pub trait PseudoMetric: Send + Sync {
    fn rho(&self, a: &[f64], b: &[f64], z: &Context) -> f64;

    /// `D_rho >= sup_z sup_{theta, theta'} rho`.
    fn diameter_bound(&self) -> f64;
}

/// Pseudo-isometry constants: `sup_nu E[rho(theta, theta', z)] <= alpha |theta - theta'|_1^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryConstants {
    pub alpha: f64,
    pub beta: f64,
}

impl IsometryConstants {
    pub fn bound(&self, l1_gap: f64) -> f64 {
        self.alpha * l1_gap.powf(self.beta)
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(l1_unchecked(a, b))
}

pub(crate) fn l1_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn clamp_to_space(p: &[f64], space: &ParamSpace) -> Result<ParamPoint> {
    if p.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            actual: p.len(),
        });
    }
    Ok(ParamPoint(
        p.iter()
            .zip(space.lower().iter().zip(space.upper()))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect(),
    ))
}

pub fn eval_rho(metric: &dyn PseudoMetric, a: &[f64], b: &[f64], z: &Context) -> f64 {
    metric.rho(a, b, z)
}

/// Loss defined by a closure; used for ad hoc losses and tests.
pub struct FnLoss<F> {
    f: F,
    param_dim: usize,
    context_dim: usize,
}

impl<F> FnLoss<F>
where
    F: Fn(&[f64], &Context) -> f64 + Send + Sync,
{
    pub fn new(param_dim: usize, context_dim: usize, f: F) -> Self {
        Self {
            f,
            param_dim,
            context_dim,
        }
    }
}

impl<F> Loss for FnLoss<F>
where
    F: Fn(&[f64], &Context) -> f64 + Send + Sync,
{
    fn eval(&self, theta: &[f64], z: &Context) -> f64 {
        (self.f)(theta, z)
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn context_dim(&self) -> usize {
        self.context_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        assert_eq!(l1_distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l1_distance(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 3.0);
        assert_eq!(l1_distance(&[0.5, -0.5, 1.0], &[0.0, 0.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn l1_dimension_mismatch() {
        assert!(matches!(
            l1_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn clamp_examples() {
        let unit1 = ParamSpace::cube(1, 0.0, 1.0).unwrap();
        let unit2 = ParamSpace::cube(2, 0.0, 1.0).unwrap();
        assert_eq!(clamp_to_space(&[0.3], &unit1).unwrap().coords(), &[0.3]);
        assert_eq!(clamp_to_space(&[2.0], &unit1).unwrap().coords(), &[1.0]);
        assert_eq!(
            clamp_to_space(&[-1.0, 0.5], &unit2).unwrap().coords(),
            &[0.0, 0.5]
        );
    }

    #[test]
    fn space_invariants() {
        let s = ParamSpace::new(vec![-1.0, 0.0], vec![2.0, 0.5], 1).unwrap();
        assert_eq!(s.l1_diameter(), 3.5);
        assert_eq!(s.linf_bound(), 2.0);
        assert_eq!(s.dim_discrete(), 1);
        assert!(ParamSpace::new(vec![1.0], vec![0.0], 1).is_err());
        assert!(ParamSpace::new(vec![0.0], vec![1.0], 2).is_err());
    }

    #[test]
    fn sampled_points_lie_in_box() {
        let s = ParamSpace::new(vec![-1.0, 0.0, 3.0], vec![2.0, 0.5, 3.0], 3).unwrap();
        let mut rng = crate::rng::stream(0, 0);
        for _ in 0..1000 {
            let p = s.sample_uniform(&mut rng);
            assert!(s.contains(&p));
        }
    }
}
