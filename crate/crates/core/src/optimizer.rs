//! Projected gradient descent on the unit box with Armijo backtracking.
//!
//! The first trial step has normalized length `initial_step`; later
//! iterations start from the Barzilai–Borwein step `sᵀy/yᵀy` (capped at the
//! same length), falling back to that cap when `sᵀy ≤ 0`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{fd_probe, Evaluation, GradientMode, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Stop as soon as the objective drops below this value.
    pub g_tol: f64,
    /// Stop when an accepted or trial step is shorter than this (max-norm).
    pub step_tol: f64,
    /// Stop when the projected gradient step `P(p − ∇g) − p` is this small.
    pub grad_tol: f64,
    pub initial_step: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub fd_step: f64,
    pub gradient: GradientMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            g_tol: 1e-12,
            step_tol: 1e-10,
            grad_tol: 1e-12,
            initial_step: 1.0,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            fd_step: 1e-6,
            gradient: GradientMode::ClosedForm,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("/g_tol", self.g_tol),
            ("/step_tol", self.step_tol),
            ("/grad_tol", self.grad_tol),
            ("/initial_step", self.initial_step),
            ("/armijo", self.armijo),
            ("/fd_step", self.fd_step),
        ];
        if let Some((ptr, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::config(*ptr, "must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::config("/backtrack", "must lie in (0, 1)"));
        }
        if self.armijo >= 1.0 {
            return Err(Error::config("/armijo", "must be below 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GTol,
    GradTol,
    StepTol,
    MaxIterations,
    LineSearchFailed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub p: Vec<f64>,
    pub g: f64,
    pub f: Option<f64>,
    /// 1-based mode index.
    pub k: Option<usize>,
    pub phi: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub p_opt: Vec<f64>,
    pub g_opt: f64,
    pub f_opt: Option<f64>,
    pub iterations: usize,
    pub function_calls: usize,
    pub gradient_calls: usize,
    pub stop: StopReason,
    pub log: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

/// A pipeline error together with the log up to the failure.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub partial: RunResult,
}

/// What the optimizer needs from an objective.
pub trait Objective {
    type Eval;

    fn n_params(&self) -> usize;
    fn evaluate(&mut self, p: &[f64]) -> Result<Self::Eval>;
    fn value(eval: &Self::Eval) -> f64;
    /// Gradient without the optimizer's own finite differences.
    fn gradient(&mut self, eval: &Self::Eval, fd_step: f64) -> Result<Vec<f64>>;
    /// Called once for the start point (iteration 0) and every accepted iterate.
    fn accept(&mut self, _iteration: usize, _eval: &Self::Eval) -> Option<String> {
        None
    }
    /// Number of `evaluate` calls so far, including any made inside `gradient`.
    fn evaluations(&self) -> usize;
    /// Frequency, 1-based mode index and correlation for the iteration log.
    fn describe(_eval: &Self::Eval) -> (Option<f64>, Option<usize>, Option<f64>) {
        (None, None, None)
    }
}

impl Objective for Problem<'_> {
    type Eval = Evaluation;

    fn n_params(&self) -> usize {
        self.model().n_params()
    }

    fn evaluate(&mut self, p: &[f64]) -> Result<Evaluation> {
        Problem::evaluate(self, p)
    }

    fn value(eval: &Evaluation) -> f64 {
        eval.g
    }

    fn gradient(&mut self, eval: &Evaluation, fd_step: f64) -> Result<Vec<f64>> {
        Ok(Problem::gradient(self, eval, fd_step)?.total)
    }

    fn accept(&mut self, iteration: usize, eval: &Evaluation) -> Option<String> {
        Problem::accept(self, iteration, eval)
    }

    fn evaluations(&self) -> usize {
        Problem::evaluations(self)
    }

    fn describe(eval: &Evaluation) -> (Option<f64>, Option<usize>, Option<f64>) {
        (Some(eval.f), Some(eval.k + 1), eval.phi)
    }
}

fn check_box(p: &[f64]) -> Result<()> {
    match p.iter().position(|x| !(0.0..=1.0).contains(x)) {
        Some(i) => Err(Error::domain(format!("evaluation requested outside the box: p[{i}] = {}", p[i]))),
        None => Ok(()),
    }
}

fn guarded<O: Objective>(obj: &mut O, p: &[f64]) -> Result<O::Eval> {
    check_box(p)?;
    obj.evaluate(p)
}

/// Forward differences of the whole objective, backward at the upper bound.
pub fn fd_gradient<O: Objective>(obj: &mut O, p: &[f64], g_at_p: f64, fd_step: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let (q, h) = fd_probe(p, i, fd_step);
        let e = guarded(obj, &q)?;
        out.push((O::value(&e) - g_at_p) / h);
    }
    Ok(out)
}

fn project(p: &[f64]) -> Vec<f64> {
    p.iter().map(|x| x.clamp(0.0, 1.0)).collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Run {
    start: Instant,
    gradient_calls: usize,
    log: Vec<IterationRecord>,
    warnings: Vec<String>,
}

impl Run {
    fn result<O: Objective>(&self, obj: &O, p: &[f64], eval: Option<&O::Eval>, stop: StopReason) -> RunResult {
        let (f, _, _) = eval.map(O::describe).unwrap_or((None, None, None));
        RunResult {
            p_opt: p.to_vec(),
            g_opt: eval.map(O::value).unwrap_or(f64::NAN),
            f_opt: f,
            iterations: self.log.len(),
            function_calls: obj.evaluations(),
            gradient_calls: self.gradient_calls,
            stop,
            log: self.log.clone(),
            warnings: self.warnings.clone(),
            wall_time_s: self.start.elapsed().as_secs_f64(),
        }
    }
}

pub fn optimize<O: Objective>(obj: &mut O, p0: &[f64], cfg: &OptimizerConfig) -> std::result::Result<RunResult, Box<Aborted>> {
    let mut run = Run {
        start: Instant::now(),
        gradient_calls: 0,
        log: Vec::new(),
        warnings: Vec::new(),
    };
    let abort = |run: &Run, obj: &O, p: &[f64], eval: Option<&O::Eval>, error: Error| {
        Box::new(Aborted {
            error,
            partial: run.result(obj, p, eval, StopReason::Aborted),
        })
    };
    if let Err(e) = cfg.validate().and_then(|_| {
        if p0.len() != obj.n_params() {
            Err(Error::domain("start point has the wrong dimension"))
        } else {
            check_box(p0)
        }
    }) {
        return Err(abort(&run, obj, p0, None, e));
    }

    let mut p = p0.to_vec();
    let mut cur = match guarded(obj, &p) {
        Ok(e) => e,
        Err(e) => return Err(abort(&run, obj, &p, None, e)),
    };
    if let Some(w) = obj.accept(0, &cur) {
        run.warnings.push(w);
    }
    let gradient = |obj: &mut O, run: &mut Run, p: &[f64], e: &O::Eval| -> Result<Vec<f64>> {
        run.gradient_calls += 1;
        match cfg.gradient {
            GradientMode::ClosedForm => obj.gradient(e, cfg.fd_step),
            GradientMode::Fd => fd_gradient(obj, p, O::value(e), cfg.fd_step),
        }
    };
    let mut grad = match gradient(obj, &mut run, &p, &cur) {
        Ok(g) => g,
        Err(e) => return Err(abort(&run, obj, &p, Some(&cur), e)),
    };
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    let stop = loop {
        if O::value(&cur) < cfg.g_tol {
            break StopReason::GTol;
        }
        let pg: Vec<f64> = project(&p.iter().zip(&grad).map(|(x, g)| x - g).collect::<Vec<_>>())
            .iter()
            .zip(&p)
            .map(|(a, b)| a - b)
            .collect();
        if inf_norm(&pg) <= cfg.grad_tol {
            break StopReason::GradTol;
        }
        if run.log.len() >= cfg.max_iterations {
            break StopReason::MaxIterations;
        }
        let gnorm = inf_norm(&grad);
        let cap = cfg.initial_step / gnorm;
        let mut alpha = match &prev {
            Some((s, y)) if dot(s, y) > 0.0 => (dot(s, y) / dot(y, y)).min(cap),
            _ => cap,
        };

        let g0 = O::value(&cur);
        let mut accepted = None;
        let mut tiny_step = false;
        for _ in 0..=cfg.max_backtracks {
            let trial = project(&p.iter().zip(&grad).map(|(x, g)| x - alpha * g).collect::<Vec<_>>());
            let d: Vec<f64> = trial.iter().zip(&p).map(|(a, b)| a - b).collect();
            if inf_norm(&d) < cfg.step_tol {
                tiny_step = true;
                break;
            }
            let e = match guarded(obj, &trial) {
                Ok(e) => e,
                Err(err) => return Err(abort(&run, obj, &p, Some(&cur), err)),
            };
            if O::value(&e) <= g0 + cfg.armijo * dot(&grad, &d) {
                accepted = Some((trial, d, e));
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some((trial, d, e)) = accepted else {
            break if tiny_step { StopReason::StepTol } else { StopReason::LineSearchFailed };
        };

        let iter = run.log.len() + 1;
        let warning = obj.accept(iter, &e);
        if let Some(w) = &warning {
            run.warnings.push(w.clone());
        }
        let (f, k, phi) = O::describe(&e);
        run.log.push(IterationRecord {
            iter,
            p: trial.clone(),
            g: O::value(&e),
            f,
            k,
            phi,
            warning,
        });
        p = trial;
        cur = e;
        if inf_norm(&d) < cfg.step_tol {
            break StopReason::StepTol;
        }
        if O::value(&cur) < cfg.g_tol {
            break StopReason::GTol;
        }
        let new_grad = match gradient(obj, &mut run, &p, &cur) {
            Ok(g) => g,
            Err(err) => return Err(abort(&run, obj, &p, Some(&cur), err)),
        };
        let y = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        prev = Some((d, y));
        grad = new_grad;
    };
    Ok(run.result(obj, &p, Some(&cur), stop))
}
