//! Lazy follow-the-perturbed-leader and its tuning rules.

use std::ops::RangeInclusive;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{EpochRecord, PerturbationSummary, RunRecord, StepRecord};
use crate::error::{invalid, Error, Result};
use crate::oracle::{ErmProblem, ErmSolver};
use crate::perturbation::{draw_exponential, draw_gaussian_process, PerturbationDraw};
use crate::rng::{stream, ADVERSARY_STREAM, PERTURBATION_STREAM_BASE, SOLVER_STREAM_BASE};
use crate::smoothing::{sample_context, AdversaryStrategy, History};
use crate::space::{Loss, ParamPoint, ParamSpace};

/// Epochs `I_tau = {(tau-1)n+1, ..., min(tau n, T)}`, 1-based. The final
/// epoch is short when `n` does not divide `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSchedule {
    horizon: usize,
    n: usize,
}

impl EpochSchedule {
    pub fn new(horizon: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "epoch length must be at least 1"));
        }
        Ok(Self { horizon, n })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn epoch_len(&self) -> usize {
        self.n
    }

    pub fn num_epochs(&self) -> usize {
        self.horizon.div_ceil(self.n)
    }

    pub fn epoch_of(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.horizon {
            return Err(Error::OutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(t.div_ceil(self.n))
    }

    pub fn epoch_range(&self, tau: usize) -> Result<RangeInclusive<usize>> {
        if tau == 0 || tau > self.num_epochs() {
            return Err(Error::OutOfRange {
                t: tau,
                horizon: self.num_epochs(),
            });
        }
        Ok((tau - 1) * self.n + 1..=(tau * self.n).min(self.horizon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningRule {
    Explicit,
    Affine,
    Polynomial,
    Planning,
    Margin,
}

/// Tuned `(eta, n)`. All hidden constants and log factors are 1; `eta` is
/// capped at `10 T` and `n` at `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub eta: f64,
    pub n: usize,
    pub rule: TuningRule,
}

impl HyperParams {
    pub fn explicit(eta: f64, n: usize) -> Result<Self> {
        let h = Self {
            eta,
            n,
            rule: TuningRule::Explicit,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(invalid("eta", format!("{} must be finite and nonnegative", self.eta)));
        }
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        Ok(())
    }

    /// Exponential-noise analysis needs `eta >= n^2`.
    pub fn below_n_squared(&self) -> bool {
        self.eta < (self.n as f64).powi(2)
    }
}

fn positive(values: &[(&'static str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(*v > 0.0) {
            return Err(invalid(name, format!("{v} must be positive")));
        }
    }
    Ok(())
}

fn capped(horizon: usize, eta: f64, n: f64, rule: TuningRule) -> HyperParams {
    let t = horizon as f64;
    let eta = eta.min(10.0 * t);
    let n = if n.is_finite() { n.round() } else { t };
    HyperParams {
        eta,
        n: (n.min(t).max(1.0)) as usize,
        rule,
    }
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(invalid("T", "must be at least 1"));
    }
    Ok(())
}

/// `eta = (T K^2 d D B A / (a sigma_dir))^{2/3}`, `n = sqrt(eta)`.
#[allow(clippy::too_many_arguments)]
pub fn tune_affine(
    horizon: usize,
    modes: usize,
    d: usize,
    diameter: f64,
    b: f64,
    big_a: f64,
    a: f64,
    sigma_dir: f64,
) -> Result<HyperParams> {
    check_horizon(horizon)?;
    positive(&[
        ("K", modes as f64),
        ("d", d as f64),
        ("D", diameter),
        ("B", b),
        ("A", big_a),
        ("a", a),
        ("sigma_dir", sigma_dir),
    ])?;
    let k = modes as f64;
    let base = horizon as f64 * k * k * d as f64 * diameter * b * big_a / (a * sigma_dir);
    let eta = base.powf(2.0 / 3.0).min(10.0 * horizon as f64);
    Ok(capped(horizon, eta, eta.sqrt(), TuningRule::Affine))
}

/// `eta = c^{(4r-2)/(4r-1)}`, `n = c^{(2r-1)/(4r-1)}` with
/// `c = T K^2 r^2 d^r D B / sigma_poly`.
#[allow(clippy::too_many_arguments)]
pub fn tune_polynomial(
    horizon: usize,
    modes: usize,
    degree: u32,
    d: usize,
    diameter: f64,
    b: f64,
    sigma_poly: f64,
) -> Result<HyperParams> {
    check_horizon(horizon)?;
    positive(&[
        ("K", modes as f64),
        ("r", degree as f64),
        ("d", d as f64),
        ("D", diameter),
        ("B", b),
        ("sigma_poly", sigma_poly),
    ])?;
    let k = modes as f64;
    let r = degree as f64;
    let base = horizon as f64 * k * k * r * r * (d as f64).powf(r) * diameter * b / sigma_poly;
    let denom = 4.0 * r - 1.0;
    let eta = base.powf((4.0 * r - 2.0) / denom);
    let n = base.powf((2.0 * r - 1.0) / denom);
    Ok(capped(horizon, eta, n, TuningRule::Polynomial))
}

/// `eta = d^{1/3} H^{5/3} K^{4/3} (T L D / (gamma sigma_dir))^{2/3}`, `n = sqrt(eta)`.
#[allow(clippy::too_many_arguments)]
pub fn tune_planning(
    horizon: usize,
    d: usize,
    plan_horizon: usize,
    modes: usize,
    diameter: f64,
    lipschitz: f64,
    gamma: f64,
    sigma_dir: f64,
) -> Result<HyperParams> {
    check_horizon(horizon)?;
    positive(&[
        ("d", d as f64),
        ("H", plan_horizon as f64),
        ("K", modes as f64),
        ("D", diameter),
        ("L", lipschitz),
        ("gamma", gamma),
        ("sigma_dir", sigma_dir),
    ])?;
    let eta = (d as f64).cbrt()
        * (plan_horizon as f64).powf(5.0 / 3.0)
        * (modes as f64).powf(4.0 / 3.0)
        * (horizon as f64 * lipschitz * diameter / (gamma * sigma_dir)).powf(2.0 / 3.0);
    let eta = eta.min(10.0 * horizon as f64);
    Ok(capped(horizon, eta, eta.sqrt(), TuningRule::Planning))
}

/// `eta = (T K A d D B / (gamma a sigma_dir))^{2/3}`, `n = sqrt(eta)`.
#[allow(clippy::too_many_arguments)]
pub fn tune_margin(
    horizon: usize,
    modes: usize,
    big_a: f64,
    a: f64,
    d: usize,
    diameter: f64,
    b: f64,
    gamma: f64,
    sigma_dir: f64,
) -> Result<HyperParams> {
    check_horizon(horizon)?;
    positive(&[
        ("K", modes as f64),
        ("A", big_a),
        ("a", a),
        ("d", d as f64),
        ("D", diameter),
        ("B", b),
        ("gamma", gamma),
        ("sigma_dir", sigma_dir),
    ])?;
    let base = horizon as f64 * modes as f64 * big_a * d as f64 * diameter * b
        / (gamma * a * sigma_dir);
    let eta = base.powf(2.0 / 3.0).min(10.0 * horizon as f64);
    Ok(capped(horizon, eta, eta.sqrt(), TuningRule::Margin))
}

#[derive(Clone)]
pub enum PerturbationKind {
    /// `-eta <xi, theta>` with `xi ~ Expo(1)^dim`.
    Exponential,
    /// `eta sum_i gamma_i f_theta(x_i)` with `m` anchors drawn from `base`.
    GaussianProcess {
        m: usize,
        base: Arc<dyn AdversaryStrategy>,
    },
}

impl std::fmt::Debug for PerturbationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PerturbationKind::Exponential => f.write_str("Exponential"),
            PerturbationKind::GaussianProcess { m, base } => f
                .debug_struct("GaussianProcess")
                .field("m", m)
                .field("base", &base.name())
                .finish(),
        }
    }
}

/// Everything a run needs besides `(eta, n)`, `T` and the seed.
pub struct LazyFtpl<'a> {
    pub loss: &'a dyn Loss,
    pub space: &'a ParamSpace,
    pub adversary: &'a dyn AdversaryStrategy,
    pub solver: &'a dyn ErmSolver,
    pub perturbation: PerturbationKind,
}

impl LazyFtpl<'_> {
    fn draw(&self, eta: f64, tau: usize, seed: u64) -> Result<PerturbationDraw> {
        let mut rng = stream(seed, PERTURBATION_STREAM_BASE + tau as u64);
        match &self.perturbation {
            PerturbationKind::Exponential => draw_exponential(self.space.dim(), eta, &mut rng),
            PerturbationKind::GaussianProcess { m, base } => {
                draw_gaussian_process(base.as_ref(), *m, eta, &mut rng)
            }
        }
    }

    /// One run of `T` rounds. Epoch `tau` minimizes the losses of all rounds
    /// before the epoch plus a fresh perturbation, and plays the minimizer
    /// for every round of the epoch. A solver failure stops the run and
    /// returns the partial record marked invalid.
    pub fn run(&self, hyper: &HyperParams, horizon: usize, seed: u64) -> Result<RunRecord> {
        hyper.validate()?;
        check_horizon(horizon)?;
        if self.loss.param_dim() != self.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                actual: self.loss.param_dim(),
            });
        }
        if self.adversary.class().context_dim != self.loss.context_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.loss.context_dim(),
                actual: self.adversary.class().context_dim,
            });
        }
        let schedule = EpochSchedule::new(horizon, hyper.n)?;
        let mut record = RunRecord::new(seed, horizon, *hyper);
        if matches!(self.perturbation, PerturbationKind::Exponential) && hyper.below_n_squared() {
            record.warnings.push(format!(
                "eta = {} is below n^2 = {}",
                hyper.eta,
                hyper.n * hyper.n
            ));
        }

        let mut adversary_rng = stream(seed, ADVERSARY_STREAM);
        let mut thetas: Vec<ParamPoint> = Vec::with_capacity(horizon);
        for tau in 1..=schedule.num_epochs() {
            let draw = self.draw(hyper.eta, tau, seed)?;
            let problem = ErmProblem::new(&record.contexts, self.loss, Some(&draw), self.space)?;
            let mut solver_rng = stream(seed, SOLVER_STREAM_BASE + tau as u64);
            let result = match self.solver.solve(&problem, &mut solver_rng) {
                Ok(r) => r,
                Err(e) => {
                    record.valid = false;
                    record.error = Some(format!("epoch {tau}: {e}"));
                    return Ok(record);
                }
            };
            record.oracle_calls += 1;
            for t in schedule.epoch_range(tau)? {
                let history = History::new(&record.contexts, &thetas);
                let z = match sample_context(self.adversary, &history, &mut adversary_rng) {
                    Ok(z) => z,
                    Err(e) => {
                        record.valid = false;
                        record.error = Some(format!("step {t}: {e}"));
                        return Ok(record);
                    }
                };
                let loss = self.loss.eval(&result.theta, &z);
                record.steps.push(StepRecord {
                    t,
                    epoch: tau,
                    digest: z.digest(),
                    loss,
                });
                record.contexts.push(z);
                thetas.push(result.theta.clone());
            }
            record.epochs.push(EpochRecord {
                epoch: tau,
                theta: result.theta,
                perturbation: PerturbationSummary::from(&draw),
                objective: result.objective,
                suboptimality: result.suboptimality,
                evaluations: result.evaluations,
            });
        }
        Ok(record)
    }
}

/// Free-function form of [`LazyFtpl::run`].
pub fn run_lazy_ftpl(
    setup: &LazyFtpl<'_>,
    hyper: &HyperParams,
    horizon: usize,
    seed: u64,
) -> Result<RunRecord> {
    setup.run(hyper, horizon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ExactThreshold, GridSolver, OracleResult};
    use crate::pwa_env::ThresholdLoss;
    use crate::rng::StreamRng;
    use crate::smoothing::{Labeler, UniformBox};
    use crate::space::{Context, FnLoss};
    use proptest::prelude::*;

    #[test]
    fn epoch_examples() {
        let s = EpochSchedule::new(20, 5).unwrap();
        assert_eq!(s.epoch_of(1).unwrap(), 1);
        assert_eq!(s.epoch_of(5).unwrap(), 1);
        assert_eq!(s.epoch_of(6).unwrap(), 2);
        assert!(matches!(s.epoch_of(0), Err(Error::OutOfRange { .. })));
        assert!(matches!(s.epoch_of(21), Err(Error::OutOfRange { .. })));
        let short = EpochSchedule::new(7, 3).unwrap();
        assert_eq!(short.epoch_range(3).unwrap(), 7..=7);
    }

    #[test]
    fn tune_affine_examples() {
        let h = tune_affine(10_000, 2, 2, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        // 160000^(2/3) evaluated independently: exp(2/3 ln 160000)
        let expected = (2.0 / 3.0 * 160_000f64.ln()).exp();
        assert!((h.eta - expected).abs() < 1e-9);
        assert!((h.eta - 2947.2).abs() < 0.1);
        assert_eq!(h.n, 54);

        let small = tune_affine(1000, 2, 2, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let big = tune_affine(8000, 2, 2, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        assert!((big.eta / small.eta - 4.0).abs() < 1e-12);

        let flat = tune_affine(100, 1, 1, 1.0, 1.0, 1.0, 1.0, f64::INFINITY).unwrap();
        assert_eq!((flat.eta, flat.n), (0.0, 1));
        assert!(tune_affine(100, 1, 1, 0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(tune_affine(0, 1, 1, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn tune_polynomial_examples() {
        // r = 1 has exponents 2/3 and 1/3
        let p = tune_polynomial(1000, 2, 1, 2, 1.0, 1.0, 0.5).unwrap();
        let base: f64 = 1000.0 * 4.0 * 2.0 / 0.5;
        assert!((p.eta - base.powf(2.0 / 3.0)).abs() < 1e-9);
        assert_eq!(p.n, base.cbrt().round() as usize);

        let h = tune_polynomial(10_000, 2, 2, 2, 1.0, 1.0, 1.0).unwrap();
        let expected = (6.0 / 7.0 * 640_000f64.ln()).exp();
        assert!((h.eta - expected).abs() < 1e-6);
        assert!((h.eta - 94_782.0).abs() < 1.0);
        assert_eq!(h.n, 308);
        assert!(h.below_n_squared());

        assert_eq!(tune_polynomial(1, 1, 1, 1, 1.0, 1.0, 1.0).unwrap().n, 1);
        assert!(tune_polynomial(10, 1, 0, 1, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn tune_planning_examples() {
        let h = tune_planning(1000, 1, 1, 1, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((h.eta - 100.0).abs() < 1e-9);
        assert_eq!(h.n, 10);
        let g = tune_planning(1000, 1, 1, 1, 1.0, 1.0, 2.0, 1.0).unwrap();
        assert!((g.eta / h.eta - 2f64.powf(-2.0 / 3.0)).abs() < 1e-12);
        // H = K = 1: the affine shape with d^{2/3} replaced by d^{1/3}
        let a = tune_affine(1000, 1, 3, 2.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let p = tune_planning(1000, 3, 1, 1, 2.0, 1.0, 1.0, 0.5).unwrap();
        assert!((a.eta / p.eta - 3f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn tune_margin_examples() {
        let h = tune_margin(1000, 1, 1.0, 1.0, 1, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((h.eta - 100.0).abs() < 1e-9);
        assert_eq!(h.n, 10);
        let m = tune_margin(5000, 3, 1.0, 1.0, 2, 1.0, 1.0, 1.0, 0.5).unwrap();
        let a = tune_affine(5000, 3, 2, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        // K vs K^2: the affine base is 3x larger
        assert!((a.eta / m.eta - 3f64.powf(2.0 / 3.0)).abs() < 1e-12);
        let capped = tune_margin(100, 1, 1.0, 1.0, 1, 1.0, 1.0, 1e-12, 1.0).unwrap();
        assert_eq!(capped.eta, 1000.0);
        assert!(capped.n <= 100);
    }

    fn threshold_setup<'a>(
        loss: &'a ThresholdLoss,
        adversary: &'a UniformBox,
        solver: &'a dyn ErmSolver,
    ) -> LazyFtpl<'a> {
        LazyFtpl {
            loss,
            space: loss.space(),
            adversary,
            solver,
            perturbation: PerturbationKind::Exponential,
        }
    }

    fn threshold_adversary() -> UniformBox {
        UniformBox::unit(
            1,
            Labeler::Threshold {
                cut: 0.4,
                flip_prob: 0.1,
            },
        )
        .unwrap()
    }

    #[test]
    fn oracle_calls_and_determinism() {
        let loss = ThresholdLoss::new(0.0, 1.0).unwrap();
        let adv = threshold_adversary();
        let setup = threshold_setup(&loss, &adv, &ExactThreshold);
        let hyper = HyperParams::explicit(30.0, 5).unwrap();
        let a = setup.run(&hyper, 10, 3).unwrap();
        assert_eq!(a.oracle_calls, 2);
        assert!(a.valid);
        let b = setup.run(&hyper, 10, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(a.warnings.is_empty());
        let warn = setup.run(&HyperParams::explicit(1.0, 5).unwrap(), 10, 3).unwrap();
        assert_eq!(warn.warnings.len(), 1);
    }

    #[test]
    fn zero_perturbation_is_follow_the_leader() {
        let loss = ThresholdLoss::new(0.0, 1.0).unwrap();
        let adv = threshold_adversary();
        let setup = threshold_setup(&loss, &adv, &ExactThreshold);
        let run = setup.run(&HyperParams::explicit(0.0, 1).unwrap(), 2, 9).unwrap();
        let z1 = &run.contexts[0];
        let expected = ExactThreshold
            .solve(
                &ErmProblem::new(std::slice::from_ref(z1), &loss, None, loss.space()).unwrap(),
                &mut stream(0, 0),
            )
            .unwrap();
        assert_eq!(run.epochs[1].theta, expected.theta);
    }

    struct Failing;

    impl ErmSolver for Failing {
        fn id(&self) -> &str {
            "failing"
        }

        fn solve(&self, problem: &ErmProblem<'_>, _: &mut StreamRng) -> Result<OracleResult> {
            if problem.data.len() >= 4 {
                Err(Error::Solver("gave up".into()))
            } else {
                Ok(OracleResult {
                    theta: problem.space.center(),
                    objective: 0.0,
                    suboptimality: crate::oracle::Suboptimality::Uncertified,
                    solver_id: "failing".into(),
                    evaluations: 0,
                    trace: vec![],
                })
            }
        }
    }

    #[test]
    fn solver_failure_yields_partial_invalid_record() {
        let loss = ThresholdLoss::new(0.0, 1.0).unwrap();
        let adv = threshold_adversary();
        let setup = threshold_setup(&loss, &adv, &Failing);
        let run = setup.run(&HyperParams::explicit(4.0, 2).unwrap(), 10, 1).unwrap();
        assert!(!run.valid);
        assert_eq!(run.oracle_calls, 2);
        assert_eq!(run.steps.len(), 4);
        assert!(run.error.unwrap().contains("gave up"));
    }

    #[test]
    fn gaussian_process_variant_runs() {
        let loss = ThresholdLoss::new(0.0, 1.0).unwrap();
        let adv = threshold_adversary();
        let grid = GridSolver::new(101);
        let setup = LazyFtpl {
            perturbation: PerturbationKind::GaussianProcess {
                m: 8,
                base: Arc::new(UniformBox::unit(1, Labeler::None).unwrap()),
            },
            ..threshold_setup(&loss, &adv, &grid)
        };
        let run = setup.run(&HyperParams::explicit(2.0, 3).unwrap(), 12, 4).unwrap();
        assert!(run.valid);
        assert_eq!(run.oracle_calls, 4);
        // exponential-only warning does not apply
        assert!(run.warnings.is_empty());
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let loss = FnLoss::new(2, 1, |_: &[f64], _: &Context| 0.0);
        let space = ParamSpace::cube(2, 0.0, 1.0).unwrap();
        let adv = UniformBox::unit(3, Labeler::None).unwrap();
        let setup = LazyFtpl {
            loss: &loss,
            space: &space,
            adversary: &adv,
            solver: &GridSolver::new(3),
            perturbation: PerturbationKind::Exponential,
        };
        assert!(matches!(
            setup.run(&HyperParams::explicit(1.0, 1).unwrap(), 3, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn theta_constant_within_epochs(seed in any::<u64>(), n in 1usize..6, horizon in 1usize..30) {
            let loss = ThresholdLoss::new(0.0, 1.0).unwrap();
            let adv = threshold_adversary();
            let setup = threshold_setup(&loss, &adv, &ExactThreshold);
            let run = setup.run(&HyperParams::explicit(25.0, n).unwrap(), horizon, seed).unwrap();
            prop_assert_eq!(run.oracle_calls, horizon.div_ceil(n));
            prop_assert_eq!(run.steps.len(), horizon);
            for s in &run.steps {
                prop_assert_eq!(s.epoch, s.t.div_ceil(n));
                let theta = &run.epochs[s.epoch - 1].theta;
                prop_assert_eq!(s.loss, loss.eval(theta, &run.contexts[s.t - 1]));
            }
        }

        #[test]
        fn schedule_partitions_rounds(horizon in 1usize..200, n in 1usize..20) {
            let s = EpochSchedule::new(horizon, n).unwrap();
            let mut next = 1;
            for tau in 1..=s.num_epochs() {
                let r = s.epoch_range(tau).unwrap();
                prop_assert_eq!(*r.start(), next);
                for t in r.clone() {
                    prop_assert_eq!(s.epoch_of(t).unwrap(), tau);
                }
                next = r.end() + 1;
            }
            prop_assert_eq!(next, horizon + 1);
        }
    }
}
