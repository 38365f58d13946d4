//! Eigenpair derivatives from the bordered system
//!
//! ```text
//! [ K − λM    −Me ] [ de/dp ]   [ −dK e + λ dM e ]
//! [ e*ᵀM       0  ] [ dλ/dp ] = [ −e*ᵀ dM e      ]
//! ```
//!
//! The matrix is unsymmetric, so it is factored once with partial pivoting
//! and reused for every parameter.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{SystemDerivative, SystemPair};
use crate::eigen::EigenSolution;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const DEFAULT_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EigenSensitivity {
    pub dlambda: Vec<f64>,
    pub de: Vec<DVector<f64>>,
    pub e_star: DVector<f64>,
    /// Largest relative residual of the bordered solves.
    pub residual: f64,
    /// Ratio of largest to smallest pivot magnitude of the LU factors.
    pub pivot_ratio: f64,
}

/// Bordered solve without the gap check. `e_star` defaults to a frozen copy of `e`.
pub fn bordered_solve(
    sys: &SystemPair,
    dsys: &[SystemDerivative],
    lambda: f64,
    e: &DVector<f64>,
    e_star: Option<&DVector<f64>>,
) -> Result<EigenSensitivity> {
    let n = sys.n_dof();
    if e.len() != n {
        return Err(Error::domain(format!("eigenvector of length {} for {} DoF", e.len(), n)));
    }
    let e_star = e_star.cloned().unwrap_or_else(|| e.clone());
    let me = sys.m.mul_vec(e);
    let mt_estar = sys.m.mul_vec(&e_star);
    if mt_estar.dot(e).abs() < 1e-14 * e_star.norm() * me.norm() {
        return Err(Error::domain("normalization vector is M-orthogonal to the eigenvector"));
    }

    let mut a = DMatrix::zeros(n + 1, n + 1);
    for (i, j, v) in sys.k.triplets() {
        a[(i, j)] += v;
    }
    for (i, j, v) in sys.m.triplets() {
        a[(i, j)] -= lambda * v;
    }
    for i in 0..n {
        a[(i, n)] = -me[i];
        a[(n, i)] = mt_estar[i];
    }

    let mut rhs = DMatrix::zeros(n + 1, dsys.len());
    for (c, d) in dsys.iter().enumerate() {
        let dke = d.dk.mul_vec(e);
        let dme = d.dm.mul_vec(e);
        let top = &dme * lambda - dke;
        rhs.view_mut((0, c), (n, 1)).copy_from(&top);
        rhs[(n, c)] = -e_star.dot(&dme);
    }

    let lu = a.clone().lu();
    let u = lu.u();
    let pivots = u.diagonal().map(f64::abs);
    let (pmin, pmax) = (pivots.min(), pivots.max());
    if !(pmin > f64::EPSILON * pmax) {
        return Err(Error::SingularSystem);
    }
    let x = lu.solve(&rhs).ok_or(Error::SingularSystem)?;

    let a_norm = a.norm();
    let residual = (0..dsys.len())
        .map(|c| {
            let xc = x.column(c);
            let bc = rhs.column(c);
            (&a * xc - bc).norm() / (a_norm * xc.norm() + bc.norm()).max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);

    Ok(EigenSensitivity {
        dlambda: (0..dsys.len()).map(|c| x[(n, c)]).collect(),
        de: (0..dsys.len()).map(|c| x.view((0, c), (n, 1)).column(0).into_owned()).collect(),
        e_star,
        residual,
        pivot_ratio: pmax / pmin,
    })
}

/// Derivatives of reported pair `k`; refuses eigenvalues whose relative gap
/// to a neighbour is below `gap_tol`.
pub fn eigenpair_derivatives(
    sys: &SystemPair,
    dsys: &[SystemDerivative],
    sol: &EigenSolution,
    k: usize,
    e_star: Option<&DVector<f64>>,
    gap_tol: f64,
) -> Result<EigenSensitivity> {
    if k >= sol.len() {
        return Err(Error::domain(format!("mode index {k} outside the {} reported pairs", sol.len())));
    }
    let gap = sol.relative_gap(k);
    if gap < gap_tol {
        return Err(Error::NearCrossing { index: k, gap, tol: gap_tol });
    }
    bordered_solve(sys, dsys, sol.eigenvalues[k], &sol.vector(k), e_star)
}

/// `dλ = eᵀ(dK − λ dM)e / eᵀMe` — valid for simple eigenvalues.
pub fn rayleigh_derivative(m: &CsrMatrix, d: &SystemDerivative, lambda: f64, e: &DVector<f64>) -> f64 {
    (d.dk.bilinear(e, e) - lambda * d.dm.bilinear(e, e)) / m.bilinear(e, e)
}

/// Gradient of `½(λ_ref − λ)²`: `−(λ_ref − λ)·dλ/dpₙ`.
pub fn cost_gradient(lambda_ref: f64, lambda: f64, dlambda: &[f64]) -> Vec<f64> {
    dlambda.iter().map(|d| -(lambda_ref - lambda) * d).collect()
}
