//! Random perturbation paths `omega(.)` added to the cumulative loss.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{standard_exponential, standard_normal, StreamRng};
use crate::smoothing::{sample_context, AdversaryStrategy, History};
use crate::space::{Context, Loss, ParamSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationDraw {
    /// `omega(theta) = -eta <xi, theta>` with `xi` iid Expo(1).
    LinearExponential { eta: f64, xi: Vec<f64> },
    /// `omega(f) = eta * sum_i gamma_i f(x_i)` with anchors from a base law.
    GaussianProcess {
        eta: f64,
        anchors: Vec<Context>,
        gammas: Vec<f64>,
    },
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(invalid("eta", format!("{eta} must be finite and nonnegative")));
    }
    Ok(())
}

pub fn draw_exponential(dim: usize, eta: f64, rng: &mut StreamRng) -> Result<PerturbationDraw> {
    check_eta(eta)?;
    if dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    let xi = (0..dim).map(|_| standard_exponential(rng)).collect();
    Ok(PerturbationDraw::LinearExponential { eta, xi })
}

pub fn draw_gaussian_process(
    base: &dyn AdversaryStrategy,
    m: usize,
    eta: f64,
    rng: &mut StreamRng,
) -> Result<PerturbationDraw> {
    check_eta(eta)?;
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    let history = History::empty();
    let anchors = (0..m)
        .map(|_| sample_context(base, &history, rng))
        .collect::<Result<Vec<_>>>()?;
    let gammas = (0..m).map(|_| standard_normal(rng)).collect();
    Ok(PerturbationDraw::GaussianProcess {
        eta,
        anchors,
        gammas,
    })
}

impl PerturbationDraw {
    pub fn eta(&self) -> f64 {
        match self {
            PerturbationDraw::LinearExponential { eta, .. }
            | PerturbationDraw::GaussianProcess { eta, .. } => *eta,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PerturbationDraw::LinearExponential { .. } => "linear_exponential",
            PerturbationDraw::GaussianProcess { .. } => "gaussian_process",
        }
    }

    /// `-eta <xi, theta>`; only defined for the linear-exponential variant.
    pub fn eval_theta(&self, theta: &[f64]) -> Result<f64> {
        match self {
            PerturbationDraw::LinearExponential { eta, xi } => {
                if xi.len() != theta.len() {
                    return Err(Error::DimensionMismatch {
                        expected: xi.len(),
                        actual: theta.len(),
                    });
                }
                Ok(-eta * xi.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
            }
            PerturbationDraw::GaussianProcess { .. } => Err(Error::Unsupported(
                "a Gaussian-process draw acts on functions, not parameter vectors".into(),
            )),
        }
    }

    /// `eta * sum_i gamma_i f(x_i)`; only defined for the Gaussian-process variant.
    pub fn eval_function(&self, f: &dyn Fn(&Context) -> f64) -> Result<f64> {
        match self {
            PerturbationDraw::GaussianProcess {
                eta,
                anchors,
                gammas,
            } => Ok(eta
                * anchors
                    .iter()
                    .zip(gammas)
                    .map(|(x, g)| g * f(x))
                    .sum::<f64>()),
            PerturbationDraw::LinearExponential { .. } => Err(Error::Unsupported(
                "a linear-exponential draw acts on parameter vectors, not functions".into(),
            )),
        }
    }

    /// The perturbation term for parameter `theta` of `loss`: the linear form
    /// directly, or the Gaussian process evaluated on the hypothesis `f_theta`.
    pub fn eval_for(&self, loss: &dyn Loss, theta: &[f64]) -> Result<f64> {
        match self {
            PerturbationDraw::LinearExponential { .. } => self.eval_theta(theta),
            PerturbationDraw::GaussianProcess { .. } => {
                let missing = std::cell::Cell::new(false);
                let v = self.eval_function(&|x| match loss.hypothesis(theta, x) {
                    Some(h) => h,
                    None => {
                        missing.set(true);
                        0.0
                    }
                })?;
                if missing.get() {
                    return Err(Error::Unsupported(
                        "loss exposes no hypothesis view for Gaussian-process perturbations".into(),
                    ));
                }
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupBound {
    /// `linf_bound * dim * eta`, a bound on `E[eta sup_theta <xi, theta>]`.
    pub certified: f64,
    /// `eta sup_theta <xi, theta>` for this draw.
    pub realized: f64,
}

pub fn sup_perturbation_bound(space: &ParamSpace, draw: &PerturbationDraw) -> Result<SupBound> {
    match draw {
        PerturbationDraw::LinearExponential { eta, xi } => {
            if xi.len() != space.dim() {
                return Err(Error::DimensionMismatch {
                    expected: space.dim(),
                    actual: xi.len(),
                });
            }
            let certified = space.linf_bound() * space.dim() as f64 * eta;
            // xi >= 0, so the sup is attained at the upper corner
            let realized = eta
                * xi
                    .iter()
                    .zip(space.upper())
                    .map(|(x, hi)| x * hi)
                    .sum::<f64>();
            Ok(SupBound {
                certified,
                realized,
            })
        }
        PerturbationDraw::GaussianProcess { .. } => Err(Error::Unsupported(
            "sup bound is only available for linear-exponential draws".into(),
        )),
    }
}
