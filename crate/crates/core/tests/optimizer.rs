use cavshape_core::assembly::SpaceKind;
use cavshape_core::geometry::{ChainDims, GeometryFamily};
use cavshape_core::model::DiscreteModel;
use cavshape_core::objective::{GradientMode, ObjectiveSpec, Problem};
use cavshape_core::optimizer::{fd_gradient, optimize, Objective, OptimizerConfig, StopReason};
use cavshape_core::{Error, Result};

/// `½Σ wᵢ(pᵢ − cᵢ)²` with a failure region for abort tests.
struct Quadratic {
    center: Vec<f64>,
    weights: Vec<f64>,
    calls: usize,
    points: Vec<Vec<f64>>,
    fail_above: Option<f64>,
}

impl Quadratic {
    fn new(center: Vec<f64>, weights: Vec<f64>) -> Self {
        Self {
            center,
            weights,
            calls: 0,
            points: Vec::new(),
            fail_above: None,
        }
    }
}

impl Objective for Quadratic {
    type Eval = (Vec<f64>, f64);

    fn n_params(&self) -> usize {
        self.center.len()
    }

    fn evaluate(&mut self, p: &[f64]) -> Result<Self::Eval> {
        self.calls += 1;
        self.points.push(p.to_vec());
        if let Some(t) = self.fail_above {
            if p[0] > t {
                return Err(Error::Domain("synthetic failure".into()));
            }
        }
        let g = p
            .iter()
            .zip(&self.center)
            .zip(&self.weights)
            .map(|((x, c), w)| 0.5 * w * (x - c).powi(2))
            .sum();
        Ok((p.to_vec(), g))
    }

    fn value(eval: &Self::Eval) -> f64 {
        eval.1
    }

    fn gradient(&mut self, eval: &Self::Eval, _fd_step: f64) -> Result<Vec<f64>> {
        Ok(eval.0.iter().zip(&self.center).zip(&self.weights).map(|((x, c), w)| w * (x - c)).collect())
    }

    fn evaluations(&self) -> usize {
        self.calls
    }
}

fn chain() -> DiscreteModel {
    let dims = ChainDims {
        n_cells: 3,
        cell_length: 0.14,
        iris_height: 0.043,
        shoulder_height: 0.11,
        equator_height: 0.12654,
        shoulder_coupling: 0.5,
        nonlinear_length: 0.6,
    };
    let fam = GeometryFamily::chain(dims, vec![[0.13, 0.15], [0.13, 0.15], [-0.012, 0.012]]).unwrap();
    DiscreteModel::new(fam, SpaceKind::ScalarH1Dirichlet, 2, 1, 6)
        .unwrap()
        .with_velocity_step(Some(1e-3))
}

fn rectangle() -> DiscreteModel {
    let fam = GeometryFamily::scaled_rectangle([0.5, 1.5], 1.0).unwrap();
    DiscreteModel::new(fam, SpaceKind::ScalarH1Dirichlet, 2, 2, 8).unwrap()
}

fn lambda_error() -> ObjectiveSpec {
    ObjectiveSpec::SquaredErrorLambda {
        lambda_ref: Some(39.720959867522204),
        f_ref: None,
    }
}

#[test]
fn quadratic_converges_inside_the_box() {
    let mut q = Quadratic::new(vec![0.3, 0.7], vec![1.0, 10.0]);
    let cfg = OptimizerConfig {
        g_tol: 1e-300,
        grad_tol: 1e-10,
        step_tol: 1e-15,
        ..Default::default()
    };
    let r = optimize(&mut q, &[0.9, 0.1], &cfg).unwrap();
    assert_eq!(r.stop, StopReason::GradTol, "{:?}", r.log.last());
    assert!((r.p_opt[0] - 0.3).abs() <= 1e-9 && (r.p_opt[1] - 0.7).abs() <= 1e-9, "{:?}", r.p_opt);
    assert_eq!(r.iterations, r.log.len());
    assert_eq!(r.function_calls, q.calls);
}

#[test]
fn active_bounds_stop_on_the_projected_gradient() {
    let mut q = Quadratic::new(vec![1.4, -0.2, 0.5], vec![1.0, 1.0, 1.0]);
    let r = optimize(&mut q, &[0.5, 0.5, 0.9], &OptimizerConfig::default()).unwrap();
    assert_eq!(r.stop, StopReason::GradTol);
    assert_eq!(r.p_opt[0], 1.0);
    assert_eq!(r.p_opt[1], 0.0);
    assert!((r.p_opt[2] - 0.5).abs() <= 1e-10);
    for p in &q.points {
        assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

#[test]
fn failed_evaluation_aborts_with_the_last_accepted_point() {
    let mut q = Quadratic::new(vec![0.9], vec![1.0]);
    q.fail_above = Some(0.5);
    let err = optimize(&mut q, &[0.1], &OptimizerConfig::default()).unwrap_err();
    assert_eq!(err.partial.stop, StopReason::Aborted);
    assert!(err.partial.p_opt[0] <= 0.5);
    assert!(matches!(err.error, Error::Domain(_)));
}

#[test]
fn bad_start_and_config_are_rejected_before_any_evaluation() {
    let mut q = Quadratic::new(vec![0.5], vec![1.0]);
    assert!(optimize(&mut q, &[1.5], &OptimizerConfig::default()).is_err());
    assert!(optimize(&mut q, &[0.5, 0.5], &OptimizerConfig::default()).is_err());
    let cfg = OptimizerConfig {
        backtrack: 1.5,
        ..Default::default()
    };
    assert!(optimize(&mut q, &[0.5], &cfg).is_err());
    assert_eq!(q.calls, 0);
}

#[test]
fn every_evaluated_point_is_feasible_and_accepted_values_decrease() {
    let model = chain();
    for gradient in [GradientMode::ClosedForm, GradientMode::Fd] {
        let spec = ObjectiveSpec::SquaredErrorFPenalty {
            f_ref: 1.3e9,
            s: 2e13,
            p_ref: Some(vec![1.0, 0.0, 0.5]),
        };
        let mut prob = Problem::new(&model, spec, 2, true).unwrap();
        let cfg = OptimizerConfig {
            gradient,
            max_iterations: 15,
            ..Default::default()
        };
        // start on a face so that backward probes are exercised
        let r = optimize(&mut prob, &[1.0, 0.0, 0.5], &cfg).unwrap();
        for p in prob.evaluated_points() {
            assert!(p.iter().all(|x| (0.0..=1.0).contains(x)), "{p:?}");
        }
        let mut last = f64::INFINITY;
        for rec in &r.log {
            assert!(rec.g <= last);
            last = rec.g;
        }
        assert_eq!(r.function_calls, prob.evaluations());
    }
}

#[test]
fn runs_are_deterministic() {
    let model = rectangle();
    let run = || {
        let mut prob = Problem::new(&model, lambda_error(), 2, true).unwrap();
        optimize(&mut prob, &[0.3], &OptimizerConfig::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.p_opt, b.p_opt);
    assert_eq!(a.g_opt, b.g_opt);
    assert_eq!(a.function_calls, b.function_calls);
    assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap());
}

#[test]
fn finite_difference_gradient_matches_closed_form() {
    let model = rectangle();
    let mut prob = Problem::new(&model, lambda_error(), 2, true).unwrap();
    for p in [0.1, 0.3, 0.8] {
        let e = prob.evaluate(&[p]).unwrap();
        let cf = prob.gradient(&e, 1e-6).unwrap().total[0];
        let fd = fd_gradient(&mut prob, &[p], e.g, 1e-6).unwrap()[0];
        assert!((cf - fd).abs() <= 1e-4 * cf.abs(), "p={p}: {cf} vs {fd}");
    }
}
