//! Mode tracking by M-weighted correlation with the previously accepted eigenvector.
//!
//! Selection is a pure function of the committed state, so trial points of a
//! line search or difference probes can be classified without disturbing it;
//! only accepted iterates are committed. Indices inside the library are
//! 0-based; warning lines print them 1-based.

use nalgebra::DVector;
use serde::Serialize;

use crate::eigen::EigenSolution;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const DEFAULT_FLOOR: f64 = 0.5;
pub const TIE_TOL: f64 = 1e-3;

/// `φ = aᵀMb / (‖a‖_M ‖b‖_M)`.
pub fn correlation(a: &DVector<f64>, b: &DVector<f64>, m: &CsrMatrix) -> Result<f64> {
    let mb = m.mul_vec(b);
    let ma = m.mul_vec(a);
    let (na, nb) = (a.dot(&ma), b.dot(&mb));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::domain("correlation of a zero vector"));
    }
    Ok((a.dot(&mb) / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackRecord {
    pub iteration: usize,
    pub index: usize,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Signed correlation of the chosen candidate.
    pub phi: f64,
    pub correlations: Vec<f64>,
    pub tie: bool,
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    vector: DVector<f64>,
    index: usize,
    lambda: f64,
    floor: f64,
    history: Vec<TrackRecord>,
    warnings: Vec<String>,
}

pub fn crossing_warning(iter: usize, old_k: usize, new_k: usize, phi: f64) -> String {
    format!("CROSSING iter={iter} old_k={} new_k={} phi={phi:.6}", old_k + 1, new_k + 1)
}

impl TrackerState {
    /// Start from the known index of the mode on the starting geometry.
    pub fn new(sol: &EigenSolution, m: &CsrMatrix, index: usize) -> Result<Self> {
        if index >= sol.len() {
            return Err(Error::domain(format!(
                "start mode {} outside the {} reported modes",
                index + 1,
                sol.len()
            )));
        }
        let mut vector = sol.vector(index);
        let norm = vector.dot(&m.mul_vec(&vector)).sqrt();
        vector /= norm;
        Ok(Self {
            vector,
            index,
            lambda: sol.eigenvalues[index],
            floor: DEFAULT_FLOOR,
            history: vec![TrackRecord { iteration: 0, index, phi: 1.0 }],
            warnings: Vec::new(),
        })
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.vector
    }

    pub fn history(&self) -> &[TrackRecord] {
        &self.history
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `argmax |φ|` over the reported candidates; ties within `TIE_TOL` go to
    /// the eigenvalue closest to the previous one.
    pub fn select(&self, sol: &EigenSolution, m: &CsrMatrix) -> Result<Selection> {
        if sol.vectors.nrows() != self.vector.len() {
            return Err(Error::domain("candidate and tracked vectors differ in length"));
        }
        let correlations = (0..sol.len())
            .map(|k| correlation(&sol.vector(k), &self.vector, m))
            .collect::<Result<Vec<_>>>()?;
        let best = correlations.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        if best < self.floor {
            return Err(Error::AmbiguousMode {
                best,
                floor: self.floor,
                candidates: correlations,
            });
        }
        let near: Vec<usize> = (0..correlations.len())
            .filter(|&k| correlations[k].abs() >= best - TIE_TOL)
            .collect();
        let index = near
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (sol.eigenvalues[a] - self.lambda).abs();
                let db = (sol.eigenvalues[b] - self.lambda).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("at least one candidate reaches the maximum");
        Ok(Selection {
            index,
            phi: correlations[index],
            tie: near.len() > 1,
            correlations,
        })
    }

    /// Accept a selection; returns the crossing warning if the index changed.
    pub fn commit(&mut self, iteration: usize, sel: &Selection, sol: &EigenSolution, m: &CsrMatrix) -> Option<String> {
        if sel.tie {
            log::info!("tracking tie at iter={iteration}: correlations {:?}", sel.correlations);
        }
        let mut vector = sol.vector(sel.index);
        let norm = vector.dot(&m.mul_vec(&vector)).sqrt();
        vector /= norm;
        let warning = (sel.index != self.index).then(|| crossing_warning(iteration, self.index, sel.index, sel.phi));
        if let Some(w) = &warning {
            log::warn!("{w}");
            self.warnings.push(w.clone());
        }
        self.vector = vector;
        self.index = sel.index;
        self.lambda = sol.eigenvalues[sel.index];
        self.history.push(TrackRecord {
            iteration,
            index: sel.index,
            phi: sel.phi,
        });
        warning
    }
}

/// Select and commit in one step.
pub fn select_index(
    sol: &EigenSolution,
    m: &CsrMatrix,
    state: &mut TrackerState,
    iteration: usize,
) -> Result<(usize, Option<String>)> {
    let sel = state.select(sol, m)?;
    let warning = state.commit(iteration, &sel, sol, m);
    Ok((sel.index, warning))
}
