//! Turns a validated config into core objects.

use std::sync::Arc;

use smoothed_ftpl::analysis::{RecipeKind, RecipeParams};
use smoothed_ftpl::ftpl::{
    tune_affine, tune_margin, tune_planning, tune_polynomial, HyperParams, PerturbationKind,
};
use smoothed_ftpl::oracle::{AlternatingSolver, ErmSolver, ExactThreshold, GridSolver};
use smoothed_ftpl::planning::{planning_isometry, HybridSystemSpec, PlanningLoss, PlanningNoise};
use smoothed_ftpl::pwa_env::{
    pseudo_isometry_constants, Aggregation, BoundaryKind, BoundarySpec, Link, ModeLoss,
    PiecewiseLoss, ThresholdLoss,
};
use smoothed_ftpl::smoothing::{
    AdversaryStrategy, GreedyMeanShift, History, Labeler, MeanShift, SmoothnessClass,
    SmoothnessKind, UniformBox,
};
use smoothed_ftpl::space::{IsometryConstants, Loss, ParamSpace, PseudoMetric};

use crate::config::{
    AdversaryConfig, Algorithm, ConfigError, EnvironmentConfig, ExperimentConfig, LabelerConfig,
    ModeLossConfig, SolverConfig,
};

pub enum EnvLoss {
    Threshold(Arc<ThresholdLoss>),
    Piecewise(Arc<PiecewiseLoss>),
    Planning(Arc<PlanningLoss>),
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: EnvLoss,
    pub adversary: Arc<dyn AdversaryStrategy>,
}

fn core_err(field: &str) -> impl Fn(smoothed_ftpl::Error) -> ConfigError + '_ {
    move |e| ConfigError::field(field, e.to_string())
}

fn labeler(cfg: &LabelerConfig) -> Labeler {
    match *cfg {
        LabelerConfig::None => Labeler::None,
        LabelerConfig::Threshold { cut, flip_prob } => Labeler::Threshold { cut, flip_prob },
    }
}

fn piecewise(
    boundary: BoundarySpec,
    mode_losses: &[ModeLossConfig],
    param_bound: f64,
) -> Result<PiecewiseLoss, ConfigError> {
    let modes: Vec<ModeLoss> = mode_losses
        .iter()
        .map(|m| match *m {
            ModeLossConfig::ClippedSquaredError { out_dim } => ModeLoss::ClippedSquaredError { out_dim },
            ModeLossConfig::ZeroOne { label } => ModeLoss::ZeroOne { label },
            ModeLossConfig::Constant { value } => ModeLoss::Constant { value },
        })
        .collect();
    let cont: usize = modes.iter().map(|m| m.block_dim(boundary.context_dim())).sum();
    let dim = cont + boundary.discrete_dim();
    let space = ParamSpace::new(vec![-param_bound; dim], vec![param_bound; dim], cont)
        .map_err(core_err("environment"))?;
    PiecewiseLoss::new(boundary, modes, space).map_err(core_err("environment"))
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self, ConfigError> {
        let env = match &config.environment {
            EnvironmentConfig::Threshold { lower, upper } => EnvLoss::Threshold(Arc::new(
                ThresholdLoss::new(*lower, *upper).map_err(core_err("environment"))?,
            )),
            EnvironmentConfig::PwaTournament {
                modes,
                context_dim,
                mode_losses,
                link,
                param_bound,
            } => {
                let b = BoundarySpec::new(*modes, *context_dim, BoundaryKind::Affine, *link, Aggregation::Tournament)
                    .map_err(core_err("environment"))?;
                EnvLoss::Piecewise(Arc::new(piecewise(b, mode_losses, *param_bound)?))
            }
            EnvironmentConfig::PwaMargin {
                modes,
                context_dim,
                mode_losses,
                link,
                param_bound,
                margin,
            } => {
                let agg = Aggregation::Argmax { margin: *margin };
                let b = BoundarySpec::new(*modes, *context_dim, BoundaryKind::Affine, *link, agg)
                    .map_err(core_err("environment"))?;
                EnvLoss::Piecewise(Arc::new(piecewise(b, mode_losses, *param_bound)?))
            }
            EnvironmentConfig::Polynomial {
                modes,
                context_dim,
                mode_losses,
                degree,
                param_bound,
                ..
            } => {
                let kind = BoundaryKind::Polynomial { degree: *degree };
                let b = BoundarySpec::new(*modes, *context_dim, kind, Link::Identity, Aggregation::Tournament)
                    .map_err(core_err("environment"))?;
                EnvLoss::Piecewise(Arc::new(piecewise(b, mode_losses, *param_bound)?))
            }
            EnvironmentConfig::Planning {
                horizon,
                u_max,
                diameter,
                lipschitz,
                loss,
            } => {
                let spec = HybridSystemSpec::two_mode_line(*horizon, *u_max, *diameter, *lipschitz, loss.clone())
                    .map_err(core_err("environment"))?;
                EnvLoss::Planning(Arc::new(PlanningLoss::new(Arc::new(spec))))
            }
        };

        let adversary: Arc<dyn AdversaryStrategy> = match &config.adversary {
            AdversaryConfig::UniformBox {
                lower,
                upper,
                labeler: l,
            } => Arc::new(UniformBox::new(lower.clone(), upper.clone(), labeler(l)).map_err(core_err("adversary"))?),
            AdversaryConfig::MeanShift {
                lower,
                upper,
                width,
                noise,
                policy,
                labeler: l,
            } => Arc::new(
                MeanShift::new(lower.clone(), upper.clone(), *width, *noise, policy.clone(), labeler(l))
                    .map_err(core_err("adversary"))?,
            ),
            AdversaryConfig::GreedyMeanShift {
                lower,
                upper,
                width,
                grid,
                labeler: l,
            } => {
                let loss: Arc<dyn Loss> = match &env {
                    EnvLoss::Threshold(t) => t.clone(),
                    EnvLoss::Piecewise(p) => p.clone(),
                    EnvLoss::Planning(p) => p.clone(),
                };
                Arc::new(
                    GreedyMeanShift::new(lower.clone(), upper.clone(), *width, *grid, loss, labeler(l))
                        .map_err(core_err("adversary"))?,
                )
            }
            AdversaryConfig::PlanningNoise { x1, width, noise } => {
                let EnvLoss::Planning(p) = &env else {
                    return Err(ConfigError::field("adversary.kind", "planning_noise needs a planning environment"));
                };
                Arc::new(PlanningNoise::new(p.spec(), x1.clone(), *width, *noise).map_err(core_err("adversary"))?)
            }
        };

        let exp = Self {
            config: config.clone(),
            env,
            adversary,
        };
        let want = exp.loss().context_dim();
        let have = exp.adversary.class().context_dim;
        if want != have {
            return Err(ConfigError::field(
                "adversary",
                format!("draws {have}-dimensional contexts but the environment needs {want}"),
            ));
        }
        if config.learner.algorithm == Algorithm::LazyFtplGp {
            let mut rng = smoothed_ftpl::rng::stream(0, 0);
            let z = exp.adversary.draw(&History::empty(), &mut rng);
            if exp.loss().hypothesis(exp.space().center().coords(), &z).is_none() {
                return Err(ConfigError::field(
                    "learner.algorithm",
                    format!("lazy_ftpl_gp needs predictions, which {} losses do not expose", config.environment.kind()),
                ));
            }
            if config.learner.solver == SolverConfig::ExactThreshold {
                return Err(ConfigError::field(
                    "learner.solver",
                    "exact_threshold handles linear perturbations only",
                ));
            }
        }
        if config.learner.solver == SolverConfig::ExactThreshold && !matches!(exp.env, EnvLoss::Threshold(_)) {
            return Err(ConfigError::field("learner.solver", "exact_threshold needs the threshold environment"));
        }
        if matches!(config.learner.solver, SolverConfig::Alternating { .. }) && !matches!(exp.env, EnvLoss::Piecewise(_)) {
            return Err(ConfigError::field("learner.solver", "alternating needs a piecewise environment"));
        }
        Ok(exp)
    }

    pub fn name(&self) -> String {
        self.config.env_name()
    }

    pub fn loss(&self) -> &dyn Loss {
        match &self.env {
            EnvLoss::Threshold(t) => t.as_ref(),
            EnvLoss::Piecewise(p) => p.as_ref(),
            EnvLoss::Planning(p) => p.as_ref(),
        }
    }

    pub fn metric(&self) -> &dyn PseudoMetric {
        match &self.env {
            EnvLoss::Threshold(t) => t.as_ref(),
            EnvLoss::Piecewise(p) => p.as_ref(),
            EnvLoss::Planning(p) => p.as_ref(),
        }
    }

    pub fn space(&self) -> &ParamSpace {
        match &self.env {
            EnvLoss::Threshold(t) => t.space(),
            EnvLoss::Piecewise(p) => p.space(),
            EnvLoss::Planning(p) => p.spec().plan_space(),
        }
    }

    pub fn sigma_dir(&self) -> Result<f64, ConfigError> {
        self.adversary
            .class()
            .sigma_dir()
            .ok_or_else(|| ConfigError::field("adversary", "needs a directionally smooth class"))
    }

    fn link_slopes(&self) -> (f64, f64) {
        match &self.env {
            EnvLoss::Piecewise(p) => p.boundary().link().slope_bounds(),
            _ => (1.0, 1.0),
        }
    }

    /// Explicit `eta` and `n` win; whatever is missing comes from the
    /// environment's tuning rule.
    pub fn hyper(&self, horizon: usize) -> Result<HyperParams, ConfigError> {
        let learner = &self.config.learner;
        if let (Some(eta), Some(n)) = (learner.eta, learner.n) {
            return HyperParams::explicit(eta, n).map_err(core_err("learner"));
        }
        let sigma = self.sigma_dir()?;
        let b = self.adversary.class().sup_bound;
        let diameter = self.space().l1_diameter();
        let (a, big_a) = self.link_slopes();
        let tuned = match (&self.config.environment, &self.env) {
            (EnvironmentConfig::Threshold { .. }, _) => tune_affine(horizon, 2, 1, diameter, b, 1.0, 1.0, sigma),
            (EnvironmentConfig::PwaTournament { modes, context_dim, .. }, _) => {
                tune_affine(horizon, *modes, *context_dim, diameter, b, big_a, a, sigma)
            }
            (EnvironmentConfig::PwaMargin { modes, context_dim, margin, .. }, _) => {
                tune_margin(horizon, *modes, big_a, a, *context_dim, diameter, b, *margin, sigma)
            }
            (
                EnvironmentConfig::Polynomial {
                    modes,
                    context_dim,
                    degree,
                    sigma_poly,
                    ..
                },
                _,
            ) => tune_polynomial(horizon, *modes, *degree, *context_dim, diameter, b, *sigma_poly),
            (EnvironmentConfig::Planning { .. }, EnvLoss::Planning(p)) => {
                let spec = p.spec();
                tune_planning(
                    horizon,
                    spec.state_dim(),
                    spec.horizon(),
                    spec.modes(),
                    spec.diameter(),
                    spec.lipschitz(),
                    spec.margin(),
                    sigma,
                )
            }
            _ => unreachable!("environment and loss are built together"),
        }
        .map_err(core_err("learner"))?;
        let h = HyperParams {
            eta: learner.eta.unwrap_or(tuned.eta),
            n: learner.n.unwrap_or(tuned.n),
            rule: tuned.rule,
        };
        h.validate().map_err(core_err("learner"))?;
        Ok(h)
    }

    pub fn perturbation(&self) -> PerturbationKind {
        match self.config.learner.algorithm {
            Algorithm::LazyFtplExpo => PerturbationKind::Exponential,
            Algorithm::LazyFtplGp => PerturbationKind::GaussianProcess {
                m: self.config.learner.gp_anchors,
                base: self.adversary.clone(),
            },
        }
    }

    /// A fresh solver; cached grids keep per-run state, so runs never share one.
    pub fn solver(&self) -> Box<dyn ErmSolver> {
        match self.config.learner.solver {
            SolverConfig::ExactThreshold => Box::new(ExactThreshold),
            SolverConfig::Grid { mesh, cached: true } => Box::new(GridSolver::cached(mesh)),
            SolverConfig::Grid { mesh, cached: false } => Box::new(GridSolver::new(mesh)),
            SolverConfig::Alternating {
                restarts,
                max_iters,
                line_mesh,
            } => Box::new(AlternatingSolver {
                restarts,
                max_iters,
                line_mesh,
                certify_mesh: None,
            }),
            SolverConfig::Auto => match (&self.env, self.config.learner.algorithm) {
                (EnvLoss::Threshold(_), Algorithm::LazyFtplExpo) => Box::new(ExactThreshold),
                (EnvLoss::Threshold(_), Algorithm::LazyFtplGp) => Box::new(GridSolver::new(1001)),
                (EnvLoss::Piecewise(_), _) => Box::new(AlternatingSolver::default()),
                (EnvLoss::Planning(_), _) => Box::new(GridSolver::cached(21)),
            },
        }
    }

    /// The class the isometry constants are stated for. Polynomial
    /// environments use the configured anti-concentration constant.
    pub fn isometry_class(&self) -> Result<SmoothnessClass, ConfigError> {
        let class = self.adversary.class();
        match &self.config.environment {
            EnvironmentConfig::Polynomial {
                degree, sigma_poly, ..
            } => SmoothnessClass::new(
                SmoothnessKind::PolynomiallySmooth {
                    degree: *degree,
                    sigma_poly: *sigma_poly,
                },
                class.context_dim,
                class.sup_bound,
            )
            .map_err(core_err("environment.sigma_poly")),
            _ => Ok(class.clone()),
        }
    }

    pub fn isometry(&self) -> Result<IsometryConstants, ConfigError> {
        let iso = match &self.env {
            EnvLoss::Threshold(t) => t.isometry(&self.isometry_class()?),
            EnvLoss::Piecewise(p) => pseudo_isometry_constants(p, &self.isometry_class()?),
            EnvLoss::Planning(p) => Ok(planning_isometry(p.spec(), self.sigma_dir()?)),
        };
        iso.map_err(core_err("adversary"))
    }

    pub fn recipe(&self) -> Result<(RecipeKind, RecipeParams), ConfigError> {
        let (a, big_a) = self.link_slopes();
        let base = RecipeParams {
            a,
            big_a,
            b: self.adversary.class().sup_bound,
            ..Default::default()
        };
        Ok(match &self.config.environment {
            EnvironmentConfig::Threshold { .. } => (
                RecipeKind::Affine,
                RecipeParams {
                    modes: 2,
                    sigma: self.sigma_dir()?,
                    ..base
                },
            ),
            EnvironmentConfig::PwaTournament { modes, .. } => (
                RecipeKind::Affine,
                RecipeParams {
                    modes: *modes,
                    sigma: self.sigma_dir()?,
                    ..base
                },
            ),
            EnvironmentConfig::PwaMargin { modes, margin, .. } => (
                RecipeKind::Margin,
                RecipeParams {
                    modes: *modes,
                    gamma: *margin,
                    sigma: self.sigma_dir()?,
                    ..base
                },
            ),
            EnvironmentConfig::Polynomial {
                modes,
                degree,
                sigma_poly,
                ..
            } => (
                RecipeKind::Polynomial,
                RecipeParams {
                    modes: *modes,
                    degree: *degree,
                    sigma: *sigma_poly,
                    ..base
                },
            ),
            EnvironmentConfig::Planning { .. } => {
                let EnvLoss::Planning(p) = &self.env else {
                    unreachable!("environment and loss are built together")
                };
                let spec = p.spec();
                (
                    RecipeKind::Planning,
                    RecipeParams {
                        modes: spec.modes(),
                        gamma: spec.margin(),
                        horizon: spec.horizon(),
                        diameter: spec.diameter(),
                        lipschitz: spec.lipschitz(),
                        sigma: self.sigma_dir()?,
                        ..base
                    },
                )
            }
        })
    }
}
