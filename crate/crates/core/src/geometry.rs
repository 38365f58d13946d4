//! Parametrized geometry families.
//!
//! A family maps a normalized design vector `p ∈ [0,1]ⁿ` to a spline patch.
//! Each parameter is normalized affinely between physical bounds `[lo, hi]`.
//! Shape derivatives need the velocity of every control point with respect to
//! each parameter; affine families return it exactly, the chain family falls
//! back to a one-sided difference of control points.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_on;
use crate::splines::{eval_nurbs_basis, point_from_basis, KnotVector, NurbsBasis, NurbsNet};

/// Dimensions of the multi-cell chain (meters).
///
/// The chain runs along x and is mirror-symmetric in y. Every cell is bounded
/// by two iris planes; between them the half-height rises from the iris to
/// the shoulders and the equator. The three design parameters are the length
/// of the first cell, the length of the last cell and an equator bump
/// amplitude `A`. The middle control point moves by `A`; the shoulders move by
/// `shoulder_coupling·A + A²/(2·nonlinear_length)`, which makes the family
/// nonlinear in `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDims {
    pub n_cells: usize,
    pub cell_length: f64,
    pub iris_height: f64,
    pub shoulder_height: f64,
    pub equator_height: f64,
    pub shoulder_coupling: f64,
    pub nonlinear_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    /// `x = width(p)·x̂`, `y = height·ŷ` over a normalized base net.
    ScaledRectangle { height: f64 },
    MultiCellChain(ChainDims),
    /// `P(p) = P_base + Σₙ (phys_n(p) − lo_n)·Dₙ` with per-parameter
    /// control-point directions `Dₙ`.
    ExplicitControlPath { directions: Vec<Vec<[f64; 2]>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryFamily {
    kind: FamilyKind,
    bounds: Vec<[f64; 2]>,
    cells: Vec<[f64; 2]>,
    base_net: NurbsNet,
}

/// Control-point velocities `dPᵢ/dpₙ` on the current net.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    pub velocities: Vec<[f64; 2]>,
    pub net: NurbsNet,
}

/// Value and spatial gradient of a displacement field at one point.
#[derive(Debug, Clone, Copy)]
pub struct DisplacementEval {
    pub value: Vector2<f64>,
    /// `∂V/∂x` (rows: components of V, columns: physical directions).
    pub gradient: Matrix2<f64>,
}

pub fn default_fd_step(p_n: f64) -> f64 {
    (0.01 * p_n).max(1e-3)
}

impl GeometryFamily {
    pub fn scaled_rectangle(width: [f64; 2], height: f64) -> Result<Self> {
        let base_net = NurbsNet::rectangle(1.0, 1.0)?;
        Self::new(FamilyKind::ScaledRectangle { height }, vec![width], Vec::new(), base_net)
    }

    pub fn chain(dims: ChainDims, bounds: Vec<[f64; 2]>) -> Result<Self> {
        if dims.n_cells < 2 {
            return Err(Error::InvalidNet("a chain needs at least two cells".into()));
        }
        if bounds.len() != 3 {
            return Err(Error::InvalidNet("the chain family has exactly three parameters".into()));
        }
        let n = dims.n_cells as f64;
        let cells = (0..dims.n_cells).map(|c| [c as f64 / n, (c + 1) as f64 / n]).collect();
        let mid: Vec<f64> = bounds.iter().map(|b| 0.5 * (b[0] + b[1])).collect();
        let base_net = chain_net(&dims, mid[0], mid[1], mid[2])?;
        Self::new(FamilyKind::MultiCellChain(dims), bounds, cells, base_net)
    }

    pub fn explicit(base_net: NurbsNet, bounds: Vec<[f64; 2]>, directions: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        Self::new(FamilyKind::ExplicitControlPath { directions }, bounds, Vec::new(), base_net)
    }

    pub fn new(kind: FamilyKind, bounds: Vec<[f64; 2]>, cells: Vec<[f64; 2]>, base_net: NurbsNet) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidNet("a family needs at least one parameter".into()));
        }
        for b in &bounds {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(Error::InvalidNet(format!("bad parameter bounds {b:?}")));
            }
        }
        if base_net.n_axes() != 2 {
            return Err(Error::InvalidNet("geometry families need a two-axis net".into()));
        }
        match &kind {
            FamilyKind::ScaledRectangle { height } => {
                if bounds.len() != 1 || !(*height > 0.0) || bounds[0][0] <= 0.0 {
                    return Err(Error::InvalidNet("scaled rectangle: one positive width range and a positive height".into()));
                }
            }
            FamilyKind::ExplicitControlPath { directions } => {
                if directions.len() != bounds.len() {
                    return Err(Error::InvalidNet("one direction set per parameter".into()));
                }
                if directions.iter().any(|d| d.len() != base_net.points().len()) {
                    return Err(Error::InvalidNet("direction sets must cover every control point".into()));
                }
            }
            FamilyKind::MultiCellChain(_) => {}
        }
        validate_cells(&cells)?;
        Ok(Self { kind, bounds, cells, base_net })
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn n_params(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    /// Cell windows on the reference ξ-axis (empty unless the family has cells).
    pub fn cells(&self) -> &[[f64; 2]] {
        &self.cells
    }

    pub fn base_net(&self) -> &NurbsNet {
        &self.base_net
    }

    /// Affine families have control points linear in `p`.
    pub fn is_affine(&self) -> bool {
        !matches!(self.kind, FamilyKind::MultiCellChain(_))
    }

    pub fn physical(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.bounds).map(|(x, b)| b[0] + (b[1] - b[0]) * x).collect()
    }

    pub fn normalized(&self, phys: &[f64]) -> Vec<f64> {
        phys.iter().zip(&self.bounds).map(|(x, b)| (x - b[0]) / (b[1] - b[0])).collect()
    }

    pub fn check_box(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::domain(format!("{} parameters given, family has {}", p.len(), self.n_params())));
        }
        if let Some((n, x)) = p.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
            return Err(Error::domain(format!("parameter {n} = {x} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn family_net(&self, p: &[f64]) -> Result<NurbsNet> {
        self.check_box(p)?;
        let phys = self.physical(p);
        match &self.kind {
            FamilyKind::ScaledRectangle { height } => {
                let (w, h) = (phys[0], *height);
                Ok(self.base_net.map_points(|q| [w * q[0], h * q[1]]))
            }
            FamilyKind::MultiCellChain(dims) => chain_net(dims, phys[0], phys[1], phys[2]),
            FamilyKind::ExplicitControlPath { directions } => {
                let mut pts = self.base_net.points().to_vec();
                for ((dirs, x), b) in directions.iter().zip(&phys).zip(&self.bounds) {
                    let t = x - b[0];
                    for (pt, d) in pts.iter_mut().zip(dirs) {
                        pt[0] += t * d[0];
                        pt[1] += t * d[1];
                    }
                }
                self.base_net.with_points(pts)
            }
        }
    }

    /// Velocities `dPᵢ/dpₙ`. Affine families ignore `step` and return the exact
    /// velocity; the chain uses `(P(p+δeₙ) − P(p))/δ`, switching to a backward
    /// difference when `pₙ + δ > 1`.
    pub fn control_velocity(&self, p: &[f64], n: usize, step: f64) -> Result<DisplacementField> {
        self.check_box(p)?;
        if n >= self.n_params() {
            return Err(Error::domain(format!("parameter index {n} out of range")));
        }
        let net = self.family_net(p)?;
        let range = self.bounds[n][1] - self.bounds[n][0];
        let velocities = match &self.kind {
            FamilyKind::ScaledRectangle { .. } => {
                self.base_net.points().iter().map(|q| [range * q[0], 0.0]).collect()
            }
            FamilyKind::ExplicitControlPath { directions } => {
                directions[n].iter().map(|d| [range * d[0], range * d[1]]).collect()
            }
            FamilyKind::MultiCellChain(_) => {
                if !(step > 0.0) {
                    return Err(Error::domain("difference step must be positive"));
                }
                let mut q = p.to_vec();
                let forward = p[n] + step <= 1.0;
                q[n] = if forward { p[n] + step } else { p[n] - step };
                if !(0.0..=1.0).contains(&q[n]) {
                    return Err(Error::domain(format!("difference step {step} does not fit in the box")));
                }
                let shifted = self.family_net(&q)?;
                let sign = if forward { 1.0 } else { -1.0 };
                shifted
                    .points()
                    .iter()
                    .zip(net.points())
                    .map(|(a, b)| [sign * (a[0] - b[0]) / step, sign * (a[1] - b[1]) / step])
                    .collect()
            }
        };
        Ok(DisplacementField { velocities, net })
    }

    /// Velocity with the default difference step `max(0.01·pₙ, 1e-3)`.
    pub fn velocity(&self, p: &[f64], n: usize) -> Result<DisplacementField> {
        let step = default_fd_step(p.get(n).copied().unwrap_or(0.0));
        self.control_velocity(p, n, step)
    }
}

fn validate_cells(cells: &[[f64; 2]]) -> Result<()> {
    if cells.is_empty() {
        return Ok(());
    }
    let tol = 1e-12;
    if cells[0][0].abs() > tol || (cells[cells.len() - 1][1] - 1.0).abs() > tol {
        return Err(Error::InvalidNet("cell windows must cover [0, 1]".into()));
    }
    for w in cells.windows(2) {
        if (w[0][1] - w[1][0]).abs() > tol {
            return Err(Error::InvalidNet("cell windows must be contiguous without overlap".into()));
        }
    }
    if cells.iter().any(|c| c[1] <= c[0]) {
        return Err(Error::InvalidNet("empty cell window".into()));
    }
    Ok(())
}

/// Control net of a chain with the given first/last cell lengths and bump.
pub fn chain_net(dims: &ChainDims, first_len: f64, last_len: f64, bump: f64) -> Result<NurbsNet> {
    let nc = dims.n_cells;
    let n = nc as f64;
    // three quadratic spans per cell, C0 at the irises
    let mut knots = vec![0.0; 3];
    for c in 0..nc {
        let a = c as f64 / n;
        knots.push(a + 1.0 / (3.0 * n));
        knots.push(a + 2.0 / (3.0 * n));
        let b = (c + 1) as f64 / n;
        if c + 1 < nc {
            knots.extend([b, b]);
        }
    }
    knots.extend([1.0; 3]);
    let ku = KnotVector::new(2, knots)?;
    let kv = KnotVector::uniform(1, 1)?;

    let shoulder = dims.shoulder_height + dims.shoulder_coupling * bump + bump * bump / (2.0 * dims.nonlinear_length);
    let equator = dims.equator_height + bump;
    let fractions = [0.0, 1.0 / 6.0, 0.5, 5.0 / 6.0];
    let mut columns: Vec<(f64, f64)> = Vec::with_capacity(4 * nc + 1);
    let mut x0 = 0.0;
    for c in 0..nc {
        let len = if c == 0 {
            first_len
        } else if c + 1 == nc {
            last_len
        } else {
            dims.cell_length
        };
        let heights = [dims.iris_height, shoulder, equator, shoulder];
        for (f, h) in fractions.iter().zip(heights) {
            columns.push((x0 + f * len, h));
        }
        x0 += len;
    }
    columns.push((x0, dims.iris_height));
    debug_assert_eq!(columns.len(), ku.n_basis());

    let points = columns.iter().flat_map(|&(x, h)| [[x, -h], [x, h]]).collect();
    NurbsNet::bspline(vec![ku, kv], points)
}

impl DisplacementField {
    pub fn eval_with_basis(&self, basis: &NurbsBasis, jacobian: &Matrix2<f64>) -> Option<DisplacementEval> {
        let v = point_from_basis(&self.velocities, basis);
        let inv = jacobian.try_inverse()?;
        Some(DisplacementEval {
            value: v.point,
            gradient: v.jacobian * inv,
        })
    }
}

/// `V(x̂) = Σ dPᵢ Rᵢ(x̂)` and `∂V/∂x = [Σ dPᵢ ⊗ ∇_ξ Rᵢ]·(∂G/∂ξ)⁻¹`.
pub fn eval_displacement(df: &DisplacementField, xhat: &[f64]) -> Result<DisplacementEval> {
    let basis = eval_nurbs_basis(&df.net, xhat, 1)?;
    let geo = point_from_basis(df.net.points(), &basis);
    let det = geo.jacobian.determinant();
    if !(det > 0.0) {
        return Err(singular(xhat, det));
    }
    df.eval_with_basis(&basis, &geo.jacobian).ok_or_else(|| singular(xhat, det))
}

fn singular(xhat: &[f64], det: f64) -> Error {
    Error::SingularJacobian {
        xi: xhat[0],
        eta: xhat.get(1).copied().unwrap_or(0.0),
        det,
    }
}

/// Minimum Jacobian determinant over a Gauss rule with `n_points` per axis on
/// every element of the net (its own breakpoints, each split `subdivide` times).
pub fn min_jacobian_det(net: &NurbsNet, n_points: usize, subdivide: usize) -> Result<f64> {
    let lines: Vec<Vec<f64>> = net.bases().iter().map(|b| refine_breakpoints(&b.breakpoints(), subdivide)).collect();
    let mut worst = f64::INFINITY;
    for eu in lines[0].windows(2) {
        for ev in lines[1].windows(2) {
            for (u, _) in gauss_on(eu[0], eu[1], n_points) {
                for (v, _) in gauss_on(ev[0], ev[1], n_points) {
                    let basis = eval_nurbs_basis(net, &[u, v], 1)?;
                    let det = point_from_basis(net.points(), &basis).jacobian.determinant();
                    worst = worst.min(det);
                }
            }
        }
    }
    Ok(worst)
}

/// Split every span into `2^levels` equal parts.
pub fn refine_breakpoints(bp: &[f64], levels: usize) -> Vec<f64> {
    let parts = 1usize << levels;
    let mut out = Vec::with_capacity((bp.len() - 1) * parts + 1);
    for w in bp.windows(2) {
        for k in 0..parts {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / parts as f64);
        }
    }
    out.push(*bp.last().unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn test_dims() -> ChainDims {
        ChainDims {
            n_cells: 3,
            cell_length: 0.115,
            iris_height: 0.035,
            shoulder_height: 0.09,
            equator_height: 0.1,
            shoulder_coupling: 0.5,
            nonlinear_length: 0.5,
        }
    }

    fn chain() -> GeometryFamily {
        GeometryFamily::chain(test_dims(), vec![[0.105, 0.125], [0.105, 0.125], [-0.01, 0.01]]).unwrap()
    }

    #[test]
    fn rectangle_endpoints() {
        let fam = GeometryFamily::scaled_rectangle([0.5, 1.5], 1.0).unwrap();
        let mid = fam.family_net(&[0.5]).unwrap();
        assert_eq!(mid, NurbsNet::rectangle(1.0, 1.0).unwrap());
        let low = fam.family_net(&[0.0]).unwrap();
        let xmax = low.points().iter().map(|p| p[0]).fold(0.0, f64::max);
        let ymax = low.points().iter().map(|p| p[1]).fold(0.0, f64::max);
        assert_eq!((xmax, ymax), (0.5, 1.0));
        assert!(matches!(fam.family_net(&[1.1]), Err(Error::Domain(_))));
        assert!(matches!(fam.family_net(&[0.2, 0.3]), Err(Error::Domain(_))));
    }

    #[test]
    fn rectangle_velocity_is_exact_for_any_step() {
        let fam = GeometryFamily::scaled_rectangle([0.5, 1.5], 1.0).unwrap();
        for step in [1e-1, 1e-4] {
            let df = fam.control_velocity(&[0.3], 0, step).unwrap();
            for (v, q) in df.velocities.iter().zip(fam.base_net().points()) {
                assert_eq!(v[0], 1.0 * q[0]);
                assert_eq!(v[1], 0.0);
            }
        }
    }

    #[test]
    fn chain_cells_partition_reference_axis() {
        let fam = chain();
        let cells = fam.cells();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[0][0], 0.0);
        assert_eq!(cells[2][1], 1.0);
        for w in cells.windows(2) {
            assert_eq!(w[0][1], w[1][0]);
        }
    }

    #[test]
    fn chain_is_symmetric_at_nominal() {
        let fam = chain();
        let net = fam.family_net(&[0.5, 0.5, 0.5]).unwrap();
        let total = 3.0 * 0.115;
        let pts = net.points();
        let n = pts.len();
        for i in 0..n {
            // reversing the index mirrors both x (columns) and y (rows)
            let j = n - 1 - i;
            assert_abs_diff_eq!(pts[i][0], total - pts[j][0], epsilon = 1e-14);
            assert_abs_diff_eq!(pts[i][1], -pts[j][1], epsilon = 1e-14);
        }
        assert!(min_jacobian_det(&net, 4, 0).unwrap() > 0.0);
    }

    #[test]
    fn parameter_moving_nothing_gives_zero_field() {
        let base = NurbsNet::rectangle(1.0, 1.0).unwrap();
        let zero = vec![[0.0, 0.0]; 4];
        let shift = vec![[1.0, 0.0]; 4];
        let fam = GeometryFamily::explicit(base, vec![[0.0, 1.0], [0.0, 1.0]], vec![zero, shift]).unwrap();
        let df = fam.control_velocity(&[0.2, 0.4], 0, 1e-3).unwrap();
        assert!(df.velocities.iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn chain_velocity_first_order_in_step() {
        let fam = chain();
        let p = [0.4, 0.6, 0.7];
        let coarse = fam.control_velocity(&p, 2, 1e-2).unwrap();
        let fine = fam.control_velocity(&p, 2, 1e-4).unwrap();
        let diff: f64 = coarse
            .velocities
            .iter()
            .zip(&fine.velocities)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum::<f64>()
            .sqrt();
        // forward difference error is ½·δ·|P''|; |P''| = ΔA²/L_nl per shoulder point
        let bound = 0.5 * 1e-2 * (0.02f64.powi(2) / 0.5) * (4.0 * 3.0f64).sqrt() * 1.01;
        assert!(diff > 0.0 && diff <= bound, "diff {diff} bound {bound}");
        // length parameters are affine in the control points
        let a = fam.control_velocity(&p, 0, 1e-2).unwrap();
        let b = fam.control_velocity(&p, 0, 1e-4).unwrap();
        for (x, y) in a.velocities.iter().zip(&b.velocities) {
            assert_abs_diff_eq!(x[0], y[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn backward_difference_at_upper_bound() {
        let fam = chain();
        let df = fam.control_velocity(&[0.5, 0.5, 1.0], 2, 1e-3).unwrap();
        assert!(df.velocities.iter().any(|v| v[1] != 0.0));
    }

    #[test]
    fn translation_and_scaling_fields() {
        let net = NurbsNet::identity(KnotVector::uniform(2, 2).unwrap(), KnotVector::uniform(2, 3).unwrap()).unwrap();
        let net = net.map_points(|p| [1.0 + 2.0 * p[0] + 0.3 * p[1] * p[1], p[1] + 0.1 * p[0]]);
        let translate = DisplacementField {
            velocities: vec![[0.3, -0.7]; net.points().len()],
            net: net.clone(),
        };
        let scale = DisplacementField {
            velocities: net.points().to_vec(),
            net,
        };
        for xhat in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.35]] {
            let t = eval_displacement(&translate, &xhat).unwrap();
            assert_abs_diff_eq!(t.gradient, Matrix2::zeros(), epsilon = 1e-13);
            let s = eval_displacement(&scale, &xhat).unwrap();
            assert_abs_diff_eq!(s.gradient, Matrix2::identity(), epsilon = 1e-13);
        }
    }
}
