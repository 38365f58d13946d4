//! Generalized symmetric eigenproblem `K e = λ M e`.
//!
//! Dense path: Cholesky `M = L Lᵀ`, symmetric eigendecomposition of
//! `L⁻¹ K L⁻ᵀ`, back-substitution `e = L⁻ᵀ q`. Eigenvalues below
//! `kernel_rel_tol · λ_max` are treated as the discrete gradient kernel of
//! curl-conforming spaces and are not reported.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::assembly::SystemPair;
use crate::error::{Error, Result};

pub const MU_0: f64 = 4.0 * std::f64::consts::PI * 1e-7;
pub const EPS_0: f64 = 8.8541878128e-12;

/// Speed of light for the vacuum constants above.
pub fn speed_of_light() -> f64 {
    1.0 / (MU_0 * EPS_0).sqrt()
}

/// `f = √λ / (2π√(με))`.
pub fn lambda_to_freq(lambda: f64, mu: f64, eps: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::domain(format!("negative eigenvalue {lambda} has no frequency")));
    }
    Ok(lambda.sqrt() / (2.0 * std::f64::consts::PI * (mu * eps).sqrt()))
}

pub fn lambda_to_freq_vacuum(lambda: f64) -> Result<f64> {
    lambda_to_freq(lambda, MU_0, EPS_0)
}

pub fn freq_to_lambda(f: f64, mu: f64, eps: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f;
    w * w * mu * eps
}

pub fn freq_to_lambda_vacuum(f: f64) -> f64 {
    freq_to_lambda(f, MU_0, EPS_0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevpOptions {
    /// Number of non-kernel pairs to report.
    pub n_wanted: usize,
    /// Kernel threshold relative to the largest eigenvalue.
    pub kernel_rel_tol: f64,
    /// Adjacent reported eigenvalues closer than this (relative) are flagged.
    pub cluster_rel_tol: f64,
}

impl Default for GevpOptions {
    fn default() -> Self {
        Self {
            n_wanted: 8,
            kernel_rel_tol: 1e-6,
            cluster_rel_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport {
    /// Index of the first eigenvalue above the threshold in the full spectrum.
    pub kernel_cut: usize,
    pub threshold: f64,
    pub largest_kernel_eigenvalue: Option<f64>,
    pub largest_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolution {
    /// Ascending physical eigenvalues (m⁻²).
    pub eigenvalues: Vec<f64>,
    /// M-orthonormal eigenvectors as columns, one per eigenvalue.
    pub vectors: DMatrix<f64>,
    pub kernel: KernelReport,
    /// Index pairs `(i, i+1)` of reported eigenvalues that are numerically
    /// degenerate.
    pub clusters: Vec<(usize, usize)>,
}

impl EigenSolution {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.vectors.column(k).into_owned()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| lambda_to_freq_vacuum(l.max(0.0)).unwrap_or(0.0)).collect()
    }

    /// Smallest relative gap of eigenvalue `k` to its reported neighbours.
    pub fn relative_gap(&self, k: usize) -> f64 {
        let l = self.eigenvalues[k];
        let mut gap = f64::INFINITY;
        if k > 0 {
            gap = gap.min((l - self.eigenvalues[k - 1]).abs());
        }
        if k + 1 < self.len() {
            gap = gap.min((self.eigenvalues[k + 1] - l).abs());
        }
        gap / l.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn solve_gevp(sys: &SystemPair, n_wanted: usize) -> Result<EigenSolution> {
    solve_gevp_with(sys, &GevpOptions { n_wanted, ..Default::default() })
}

pub fn solve_gevp_with(sys: &SystemPair, opts: &GevpOptions) -> Result<EigenSolution> {
    solve_dense(&sys.k.to_dense(), &sys.m.to_dense(), opts)
}

pub fn solve_dense(k: &DMatrix<f64>, m: &DMatrix<f64>, opts: &GevpOptions) -> Result<EigenSolution> {
    let n = k.nrows();
    if n == 0 || k.shape() != (n, n) || m.shape() != (n, n) {
        return Err(Error::domain("stiffness and mass must be square and of equal size"));
    }
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    // C = L⁻¹ K L⁻ᵀ
    let mut y = k.clone();
    if !l.solve_lower_triangular_mut(&mut y) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut c = y.transpose();
    if !l.solve_lower_triangular_mut(&mut c) {
        return Err(Error::NotPositiveDefinite);
    }
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[n - 1]];
    let threshold = opts.kernel_rel_tol * largest.abs();
    let kernel_cut = order.iter().position(|&i| eig.eigenvalues[i] >= threshold).unwrap_or(n);
    let largest_kernel_eigenvalue = kernel_cut.checked_sub(1).map(|i| eig.eigenvalues[order[i]]);

    let picked: Vec<usize> = order[kernel_cut..].iter().copied().take(opts.n_wanted).collect();
    let mut q = DMatrix::zeros(n, picked.len());
    for (j, &i) in picked.iter().enumerate() {
        q.set_column(j, &eig.eigenvectors.column(i));
    }
    let lt = l.transpose();
    if !lt.solve_upper_triangular_mut(&mut q) {
        return Err(Error::NotPositiveDefinite);
    }
    // re-normalize in M (the back-substitution is exact only up to rounding)
    for mut col in q.column_iter_mut() {
        let norm = (col.dot(&(m * &col))).sqrt();
        col /= norm;
        let (imax, _) = col.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let eigenvalues: Vec<f64> = picked.iter().map(|&i| eig.eigenvalues[i]).collect();
    let clusters = eigenvalues
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[1] - w[0]).abs() <= opts.cluster_rel_tol * w[1].abs())
        .map(|(i, _)| (i, i + 1))
        .collect();

    Ok(EigenSolution {
        eigenvalues,
        vectors: q,
        kernel: KernelReport {
            kernel_cut,
            threshold,
            largest_kernel_eigenvalue,
            largest_eigenvalue: largest,
        },
        clusters,
    })
}

/// `max_k ‖K e_k − λ_k M e_k‖ / ‖K e_k‖`.
pub fn max_residual(sys: &SystemPair, sol: &EigenSolution) -> f64 {
    (0..sol.len())
        .map(|k| {
            let e = sol.vector(k);
            let ke = sys.k.mul_vec(&e);
            let me = sys.m.mul_vec(&e);
            (&ke - &me * sol.eigenvalues[k]).norm() / ke.norm().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// `max_{i,j} |eᵢᵀ M eⱼ − δᵢⱼ|`.
pub fn orthonormality_error(m: &crate::sparse::CsrMatrix, sol: &EigenSolution) -> f64 {
    let me: Vec<DVector<f64>> = (0..sol.len()).map(|k| m.mul_vec(&sol.vector(k))).collect();
    let mut worst = 0.0f64;
    for i in 0..sol.len() {
        for (j, mej) in me.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((sol.vectors.column(i).dot(mej) - target).abs());
        }
    }
    worst
}
