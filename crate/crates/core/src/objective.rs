//! Objective functions on a tracked eigenpair, field-on-axis extraction and
//! flatness measures.
//!
//! Variants:
//!
//! * squared error in λ: `½(λ_ref − λ)²`
//! * frequency error with geometry penalty: `(f_ref − f)² + s‖p − p_ref‖²`
//! * flatness combined: `(1 − η₁) + (1 − η₂) + α(f_ref − f)² + β‖p − p_ref‖²`
//!
//! `p − p_ref` is measured in normalized parameters.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::assembly::{eval_field, DiscreteSpace, FieldValue};
use crate::eigen::{freq_to_lambda_vacuum, lambda_to_freq_vacuum};
use crate::error::{Error, Result};
use crate::model::{ModalState, SpectralModel};
use crate::splines::{eval_point, NurbsNet};
use crate::tracking::{Selection, TrackerState};

/// Magnitude of the axis-parallel field at one point of the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisSample {
    pub xi: f64,
    pub x: f64,
    pub value: f64,
}

/// Samples along `η = 1/2` at the `n_samples` midpoints `(i + ½)/n` in ξ.
/// Scalar fields are sampled directly; vector fields contribute their
/// physical x-component.
pub fn field_on_axis(space: &DiscreteSpace, net: &NurbsNet, coeffs: &DVector<f64>, n_samples: usize) -> Result<Vec<AxisSample>> {
    (0..n_samples)
        .map(|i| {
            let xi = (i as f64 + 0.5) / n_samples as f64;
            let at = [xi, 0.5];
            let value = match eval_field(space, net, coeffs.as_slice(), at)? {
                FieldValue::Scalar(u) => u.abs(),
                FieldValue::Vector(v) => v.dot(&Vector2::x()).abs(),
            };
            let x = eval_point(net, &at)?.point[0];
            Ok(AxisSample { xi, x, value })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessReport {
    pub peaks: Vec<f64>,
    /// Sample index of each peak.
    pub peak_samples: Vec<usize>,
    pub eta1: f64,
    pub eta2: f64,
    /// Divisor convention of the standard deviation in `η₂`.
    pub std_convention: &'static str,
}

/// `η₁ = 1 − (max − min)/mean`, `η₂ = 1 − std/mean` with sample std (divisor N−1).
pub fn flatness_from_peaks(peaks: &[f64]) -> Result<(f64, f64)> {
    if peaks.is_empty() {
        return Err(Error::domain("flatness of an empty peak set"));
    }
    let n = peaks.len() as f64;
    let mean = peaks.iter().sum::<f64>() / n;
    if !(mean.abs() > 0.0) {
        return Err(Error::domain("zero mean peak"));
    }
    let max = peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = peaks.iter().copied().fold(f64::INFINITY, f64::min);
    let std = if peaks.len() > 1 {
        (peaks.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((1.0 - (max - min) / mean, 1.0 - std / mean))
}

/// Per-cell maxima of `|sample|`. A sample at `ξ` belongs to the window
/// `[ξ₀, ξ₁)`; the last window is closed.
pub fn flatness(samples: &[AxisSample], cells: &[[f64; 2]]) -> Result<FlatnessReport> {
    let mut peaks = Vec::with_capacity(cells.len());
    let mut peak_samples = Vec::with_capacity(cells.len());
    for (c, w) in cells.iter().enumerate() {
        let last = c + 1 == cells.len();
        let best = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.xi >= w[0] && (s.xi < w[1] || (last && s.xi <= w[1])))
            .max_by(|a, b| a.1.value.abs().total_cmp(&b.1.value.abs()))
            .ok_or_else(|| Error::domain(format!("no axis sample in cell window {c}")))?;
        peaks.push(best.1.value.abs());
        peak_samples.push(best.0);
    }
    let (eta1, eta2) = flatness_from_peaks(&peaks)?;
    Ok(FlatnessReport {
        peaks,
        peak_samples,
        eta1,
        eta2,
        std_convention: "sample (N-1)",
    })
}

fn default_samples_per_cell() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½(λ_ref − λ)²`; give exactly one of `lambda_ref` (m⁻²) or `f_ref` (Hz).
    SquaredErrorLambda {
        #[serde(default)]
        lambda_ref: Option<f64>,
        #[serde(default)]
        f_ref: Option<f64>,
    },
    /// `(f_ref − f)² + s‖p − p_ref‖²`.
    SquaredErrorFPenalty {
        f_ref: f64,
        s: f64,
        #[serde(default)]
        p_ref: Option<Vec<f64>>,
    },
    /// `(1 − η₁) + (1 − η₂) + α(f_ref − f)² + β‖p − p_ref‖²`.
    FlatnessCombined {
        f_ref: f64,
        alpha: f64,
        beta: f64,
        #[serde(default)]
        p_ref: Option<Vec<f64>>,
        #[serde(default = "default_samples_per_cell")]
        samples_per_cell: usize,
    },
}

impl ObjectiveSpec {
    pub fn validate(&self, n_params: usize) -> Result<()> {
        let bad = |pointer: &str, message: &str| Err(Error::config(pointer, message));
        let check_ref = |p_ref: &Option<Vec<f64>>| match p_ref {
            Some(r) if r.len() != n_params => bad("/p_ref", "length differs from the number of parameters"),
            Some(r) if r.iter().any(|x| !(0.0..=1.0).contains(x)) => bad("/p_ref", "reference outside [0, 1]"),
            _ => Ok(()),
        };
        match self {
            Self::SquaredErrorLambda { lambda_ref, f_ref } => match (lambda_ref, f_ref) {
                (Some(l), None) if *l >= 0.0 => Ok(()),
                (None, Some(f)) if *f >= 0.0 => Ok(()),
                _ => bad("", "exactly one nonnegative lambda_ref or f_ref is required"),
            },
            Self::SquaredErrorFPenalty { f_ref, s, p_ref } => {
                if !(*s >= 0.0) || !(*f_ref >= 0.0) {
                    return bad("/s", "s and f_ref must be nonnegative");
                }
                check_ref(p_ref)
            }
            Self::FlatnessCombined {
                f_ref,
                alpha,
                beta,
                p_ref,
                samples_per_cell,
            } => {
                if !(*alpha >= 0.0 && *beta >= 0.0 && *f_ref >= 0.0) {
                    return bad("", "alpha, beta and f_ref must be nonnegative");
                }
                if *samples_per_cell == 0 {
                    return bad("/samples_per_cell", "at least one sample per cell");
                }
                check_ref(p_ref)
            }
        }
    }

    fn p_ref(&self) -> Option<&[f64]> {
        match self {
            Self::SquaredErrorLambda { .. } => None,
            Self::SquaredErrorFPenalty { p_ref, .. } | Self::FlatnessCombined { p_ref, .. } => p_ref.as_deref(),
        }
    }

    /// Fill a missing `p_ref` with the start point.
    pub fn with_default_reference(mut self, p0: &[f64]) -> Self {
        match &mut self {
            Self::SquaredErrorLambda { .. } => {}
            Self::SquaredErrorFPenalty { p_ref, .. } | Self::FlatnessCombined { p_ref, .. } => {
                p_ref.get_or_insert_with(|| p0.to_vec());
            }
        }
        self
    }
}

/// Individual terms of `g`, already weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Terms {
    pub frequency: f64,
    pub penalty: f64,
    pub flatness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientBreakdown {
    pub frequency: Vec<f64>,
    pub penalty: Vec<f64>,
    pub flatness: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub p: Vec<f64>,
    pub g: f64,
    pub terms: Terms,
    pub k: usize,
    pub lambda: f64,
    pub f: f64,
    /// Correlation with the tracked eigenvector (tracking on only).
    pub phi: Option<f64>,
    pub label: Option<String>,
    pub flatness: Option<FlatnessReport>,
    pub state: ModalState,
    selection: Option<Selection>,
}

impl Evaluation {
    /// `{"g":…, "terms":{…}, "k":…, "phi":…}` with a 1-based `k`.
    pub fn breakdown_json(&self) -> serde_json::Value {
        serde_json::json!({
            "g": self.g,
            "terms": self.terms,
            "k": self.k + 1,
            "phi": self.phi,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    ClosedForm,
    Fd,
}

/// Objective on a model with an optional mode tracker.
pub struct Problem<'a> {
    model: &'a dyn SpectralModel,
    spec: ObjectiveSpec,
    start_index: usize,
    tracking: bool,
    tracker: Option<TrackerState>,
    evaluations: usize,
    evaluated: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    /// `start_index` is the 0-based index of the wanted mode at the first evaluated point.
    pub fn new(model: &'a dyn SpectralModel, spec: ObjectiveSpec, start_index: usize, tracking: bool) -> Result<Self> {
        spec.validate(model.n_params())?;
        if let ObjectiveSpec::FlatnessCombined { .. } = spec {
            if model.cells().is_empty() {
                return Err(Error::config("/objective/variant", "flatness needs a family with cell windows"));
            }
        }
        Ok(Self {
            model,
            spec,
            start_index,
            tracking,
            tracker: None,
            evaluations: 0,
            evaluated: Vec::new(),
        })
    }

    pub fn model(&self) -> &dyn SpectralModel {
        self.model
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Every parameter point handed to the pipeline, in order.
    pub fn evaluated_points(&self) -> &[Vec<f64>] {
        &self.evaluated
    }

    pub fn tracker(&self) -> Option<&TrackerState> {
        self.tracker.as_ref()
    }

    pub fn evaluate(&mut self, p: &[f64]) -> Result<Evaluation> {
        self.model.check_box(p)?;
        self.evaluations += 1;
        self.evaluated.push(p.to_vec());
        let state = self.model.solve(p)?;
        let (k, phi, selection) = if self.tracking {
            if self.tracker.is_none() {
                self.tracker = Some(TrackerState::new(&state.solution, &state.mass, self.start_index)?);
            }
            let sel = self.tracker.as_ref().expect("initialized above").select(&state.solution, &state.mass)?;
            (sel.index, Some(sel.phi), Some(sel))
        } else {
            if self.start_index >= state.solution.len() {
                return Err(Error::domain(format!("mode {} not among the reported modes", self.start_index + 1)));
            }
            (self.start_index, None, None)
        };
        let lambda = state.solution.eigenvalues[k];
        let f = lambda_to_freq_vacuum(lambda.max(0.0))?;
        let pen = |p_ref: Option<&[f64]>| p_ref.map_or(0.0, |r| p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum());
        let mut flat = None;
        let terms = match &self.spec {
            ObjectiveSpec::SquaredErrorLambda { lambda_ref, f_ref } => {
                let lr = lambda_ref.unwrap_or_else(|| freq_to_lambda_vacuum(f_ref.unwrap_or(0.0)));
                Terms {
                    frequency: 0.5 * (lr - lambda).powi(2),
                    ..Default::default()
                }
            }
            ObjectiveSpec::SquaredErrorFPenalty { f_ref, s, .. } => Terms {
                frequency: (f_ref - f).powi(2),
                penalty: s * pen(self.spec.p_ref()),
                flatness: 0.0,
            },
            ObjectiveSpec::FlatnessCombined {
                f_ref,
                alpha,
                beta,
                samples_per_cell,
                ..
            } => {
                let cells = self.model.cells();
                let samples = self.model.axis_field(&state, k, samples_per_cell * cells.len())?;
                let report = flatness(&samples, &cells)?;
                let t = Terms {
                    frequency: alpha * (f_ref - f).powi(2),
                    penalty: beta * pen(self.spec.p_ref()),
                    flatness: (1.0 - report.eta1) + (1.0 - report.eta2),
                };
                flat = Some(report);
                t
            }
        };
        Ok(Evaluation {
            p: p.to_vec(),
            g: terms.frequency + terms.penalty + terms.flatness,
            terms,
            k,
            lambda,
            f,
            phi,
            label: state.label(k).map(str::to_owned),
            flatness: flat,
            state,
            selection,
        })
    }

    /// Commit an accepted iterate to the tracker; returns a crossing warning
    /// if the tracked index changed.
    pub fn accept(&mut self, iteration: usize, eval: &Evaluation) -> Option<String> {
        match (&mut self.tracker, &eval.selection) {
            (Some(t), Some(sel)) => t.commit(iteration, sel, &eval.state.solution, &eval.state.mass),
            _ => None,
        }
    }

    /// Closed-form gradient; flatness terms (if any) by forward differences
    /// with step `max(fd_step·|pₙ|, fd_step)`, backward at the upper bound.
    pub fn gradient(&mut self, eval: &Evaluation, fd_step: f64) -> Result<GradientBreakdown> {
        let n = self.model.n_params();
        let dl = self.model.eigenvalue_gradient(&eval.state, eval.k)?;
        // df/dλ = f / (2λ)
        let df: Vec<f64> = dl.iter().map(|d| eval.f / (2.0 * eval.lambda) * d).collect();
        let pen_grad = |w: f64| -> Vec<f64> {
            match self.spec.p_ref() {
                Some(r) => eval.p.iter().zip(r).map(|(a, b)| 2.0 * w * (a - b)).collect(),
                None => vec![0.0; n],
            }
        };
        let (frequency, penalty, flatness) = match &self.spec {
            ObjectiveSpec::SquaredErrorLambda { lambda_ref, f_ref } => {
                let lr = lambda_ref.unwrap_or_else(|| freq_to_lambda_vacuum(f_ref.unwrap_or(0.0)));
                (crate::sensitivity::cost_gradient(lr, eval.lambda, &dl), vec![0.0; n], vec![0.0; n])
            }
            ObjectiveSpec::SquaredErrorFPenalty { f_ref, s, .. } => (
                df.iter().map(|d| -2.0 * (f_ref - eval.f) * d).collect(),
                pen_grad(*s),
                vec![0.0; n],
            ),
            ObjectiveSpec::FlatnessCombined { f_ref, alpha, beta, .. } => {
                let freq = df.iter().map(|d| -2.0 * alpha * (f_ref - eval.f) * d).collect();
                let pen = pen_grad(*beta);
                let flat = self.flatness_fd(eval, fd_step)?;
                (freq, pen, flat)
            }
        };
        let total = (0..n).map(|i| frequency[i] + penalty[i] + flatness[i]).collect();
        Ok(GradientBreakdown {
            frequency,
            penalty,
            flatness,
            total,
        })
    }

    fn flatness_fd(&mut self, eval: &Evaluation, fd_step: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(eval.p.len());
        for i in 0..eval.p.len() {
            let (q, h) = fd_probe(&eval.p, i, fd_step);
            let probe = self.evaluate(&q)?;
            out.push((probe.terms.flatness - eval.terms.flatness) / h);
        }
        Ok(out)
    }
}

/// Probe point for a one-sided difference in component `i` and the signed step
/// `h = ±max(step·|pᵢ|, step)` (negative at the upper bound).
pub fn fd_probe(p: &[f64], i: usize, step: f64) -> (Vec<f64>, f64) {
    let h = (step * p[i].abs()).max(step);
    let mut q = p.to_vec();
    if p[i] + h <= 1.0 {
        q[i] = p[i] + h;
        (q, h)
    } else {
        q[i] = p[i] - h;
        (q, -h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatness_hand_values() {
        assert_eq!(flatness_from_peaks(&[1.0, 1.0, 1.0]).unwrap(), (1.0, 1.0));
        assert_eq!(flatness_from_peaks(&[1.0, 2.0, 3.0]).unwrap(), (0.0, 0.5));
        let (e1, e2) = flatness_from_peaks(&[1.0, 1.0, 1.0 + 1e-9]).unwrap();
        assert!(e1 >= 1.0 - 1e-8 && e2 >= 1.0 - 1e-8);
        assert!(flatness_from_peaks(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn window_assignment() {
        let samples: Vec<AxisSample> = (0..6)
            .map(|i| AxisSample {
                xi: (i as f64 + 0.5) / 6.0,
                x: 0.0,
                value: [1.0, -3.0, 2.0, 2.0, 0.5, 3.0][i],
            })
            .collect();
        let r = flatness(&samples, &[[0.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 1.0]]).unwrap();
        assert_eq!(r.peaks, vec![3.0, 2.0, 3.0]);
        assert_eq!(r.peak_samples, vec![1, 3, 5]);
        assert!(flatness(&samples[..2], &[[0.0, 0.5], [0.5, 1.0]]).is_err());
    }

    #[test]
    fn spec_validation() {
        let spec: ObjectiveSpec = serde_json::from_str(r#"{"variant":"squared-error-lambda","f_ref":3e9}"#).unwrap();
        assert!(spec.validate(1).is_ok());
        let both: ObjectiveSpec =
            serde_json::from_str(r#"{"variant":"squared-error-lambda","f_ref":3e9,"lambda_ref":1.0}"#).unwrap();
        assert!(both.validate(1).is_err());
        assert!(serde_json::from_str::<ObjectiveSpec>(r#"{"variant":"squared-error-f-penalty","f_ref":1,"s":1,"bogus":2}"#).is_err());
        let neg: ObjectiveSpec = serde_json::from_str(r#"{"variant":"squared-error-f-penalty","f_ref":1,"s":-1}"#).unwrap();
        assert!(neg.validate(1).is_err());
    }

    #[test]
    fn probes_stay_in_the_box() {
        assert_eq!(fd_probe(&[0.5], 0, 1e-3), (vec![0.5 + 5e-4f64.max(1e-3)], 1e-3));
        let (q, h) = fd_probe(&[1.0, 0.2], 0, 1e-3);
        assert!(h < 0.0 && q[0] < 1.0);
    }
}
