//! B-spline and NURBS bases on open knot vectors, plus curve/surface evaluation.
//!
//! Basis values and derivatives come from the triangular Cox–de Boor table
//! (values and derivative coefficients computed in one sweep over the active
//! span). Evaluation at the right end of the parameter range uses the last
//! non-degenerate span, so the closed interval `[ξ_first, ξ_last]` is valid.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open (clamped) knot vector: the first and last knots are repeated exactly
/// `degree + 1` times, interior knots at most `degree` times.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let m = knots.len();
        if m < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "{m} knots cannot carry degree {degree} (need at least {})",
                2 * (degree + 1)
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
        }
        let (a, b) = (knots[0], knots[m - 1]);
        if a >= b {
            return Err(Error::InvalidKnots("empty parameter range".into()));
        }
        let start = knots.iter().take_while(|&&k| k == a).count();
        let end = knots.iter().rev().take_while(|&&k| k == b).count();
        if start != degree + 1 || end != degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "end knots must be repeated exactly {} times (found {start} and {end})",
                degree + 1
            )));
        }
        let interior = &knots[start..m - end];
        let max_mult = degree.max(1);
        let mut i = 0;
        while i < interior.len() {
            let run = interior[i..].iter().take_while(|&&k| k == interior[i]).count();
            if run > max_mult {
                return Err(Error::InvalidKnots(format!(
                    "interior knot {} repeated {run} times (at most {max_mult})",
                    interior[i]
                )));
            }
            i += run;
        }
        Ok(Self { degree, knots })
    }

    /// Open knot vector over the given breakpoints with single interior knots
    /// (maximal smoothness `C^{degree-1}`).
    pub fn from_breakpoints(degree: usize, breakpoints: &[f64]) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidKnots("need at least two breakpoints".into()));
        }
        let n = breakpoints.len();
        let mut knots = Vec::with_capacity(n + 2 * degree);
        knots.extend(std::iter::repeat_n(breakpoints[0], degree));
        knots.extend_from_slice(breakpoints);
        knots.extend(std::iter::repeat_n(breakpoints[n - 1], degree));
        Self::new(degree, knots)
    }

    /// Uniform open knot vector on `[0, 1]` with `n_elements` spans.
    pub fn uniform(degree: usize, n_elements: usize) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::InvalidKnots("zero elements".into()));
        }
        let bp: Vec<f64> = (0..=n_elements).map(|i| i as f64 / n_elements as f64).collect();
        Self::from_breakpoints(degree, &bp)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Distinct knot values in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut bp: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if bp.last() != Some(&k) {
                bp.push(k);
            }
        }
        bp
    }

    pub fn n_elements(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Greville abscissae: averages of `degree` consecutive interior knots.
    pub fn greville(&self) -> Vec<f64> {
        let d = self.degree;
        if d == 0 {
            return (0..self.n_basis())
                .map(|i| 0.5 * (self.knots[i] + self.knots[i + 1]))
                .collect();
        }
        (0..self.n_basis())
            .map(|i| self.knots[i + 1..=i + d].iter().sum::<f64>() / d as f64)
            .collect()
    }

    /// Index `i` of the span `[ξ_i, ξ_{i+1})` containing `xi`; the right end
    /// belongs to the last non-degenerate span.
    pub fn find_span(&self, xi: f64) -> Result<usize> {
        let (a, b) = self.domain();
        if !(a..=b).contains(&xi) {
            return Err(Error::domain(format!("parameter {xi} outside knot range [{a}, {b}]")));
        }
        let n = self.n_basis() - 1;
        if xi >= self.knots[n + 1] {
            return Ok(n);
        }
        let (mut lo, mut hi) = (self.degree, n + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xi < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }
}

/// Values and derivatives of the `degree + 1` basis functions active at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    /// Global index of the first active function.
    pub first: usize,
    /// `ders[k][j]`: k-th derivative of function `first + j`.
    pub ders: Vec<Vec<f64>>,
}

impl BasisEval {
    pub fn values(&self) -> &[f64] {
        &self.ders[0]
    }
}

pub fn eval_bspline_basis(kv: &KnotVector, xi: f64, n_derivs: usize) -> Result<BasisEval> {
    let span = kv.find_span(xi)?;
    Ok(BasisEval {
        first: span - kv.degree,
        ders: ders_basis(kv, span, xi, n_derivs),
    })
}

fn ders_basis(kv: &KnotVector, span: usize, u: f64, n: usize) -> Vec<Vec<f64>> {
    let p = kv.degree;
    let k = &kv.knots;
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - k[span + 1 - j];
        right[j] = k[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            // lower triangle: knot differences, upper triangle: basis values
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = vec![vec![0.0; p + 1]; n + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let nd = n.min(p);
    let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for kk in 1..=nd {
            let mut d = 0.0;
            let rk = r as isize - kk as isize;
            let pk = p - kk;
            if r >= kk {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { kk - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                d += a[s2][kk] * ndu[r][pk];
            }
            ders[kk][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for (kk, row) in ders.iter_mut().enumerate().take(nd + 1).skip(1) {
        for v in row.iter_mut() {
            *v *= factor;
        }
        factor *= (p - kk) as f64;
    }
    ders
}

/// Control net of a NURBS curve (one axis) or tensor-product surface (two axes).
///
/// Control points are stored row-major over the tensor grid: point `(i_u, i_v)`
/// lives at index `i_u * n_v + i_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct NurbsNet {
    bases: Vec<KnotVector>,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl NurbsNet {
    pub fn new(bases: Vec<KnotVector>, points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Self> {
        if bases.is_empty() || bases.len() > 2 {
            return Err(Error::InvalidNet(format!("{} axes (expected 1 or 2)", bases.len())));
        }
        let expected: usize = bases.iter().map(KnotVector::n_basis).product();
        if points.len() != expected {
            return Err(Error::InvalidNet(format!(
                "{} control points for a {expected}-function basis",
                points.len()
            )));
        }
        if weights.len() != expected {
            return Err(Error::InvalidNet(format!("{} weights for {expected} control points", weights.len())));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidNet("weights must be strictly positive".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidNet("non-finite control point".into()));
        }
        Ok(Self { bases, points, weights })
    }

    /// B-spline net with unit weights.
    pub fn bspline(bases: Vec<KnotVector>, points: Vec<[f64; 2]>) -> Result<Self> {
        let n = points.len();
        Self::new(bases, points, vec![1.0; n])
    }

    /// Surface whose control points sit on the Greville grid of `[0,1]²`:
    /// the identity map.
    pub fn identity(ku: KnotVector, kv: KnotVector) -> Result<Self> {
        let gu = ku.greville();
        let gv = kv.greville();
        let points = gu.iter().flat_map(|&x| gv.iter().map(move |&y| [x, y])).collect();
        Self::bspline(vec![ku, kv], points)
    }

    /// Bilinear single-element patch `[0, width] × [0, height]`.
    pub fn rectangle(width: f64, height: f64) -> Result<Self> {
        let kv = KnotVector::uniform(1, 1)?;
        let net = Self::identity(kv.clone(), kv)?;
        Ok(net.map_points(|p| [p[0] * width, p[1] * height]))
    }

    pub fn n_axes(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[KnotVector] {
        &self.bases
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Functions per axis.
    pub fn shape(&self) -> Vec<usize> {
        self.bases.iter().map(KnotVector::n_basis).collect()
    }

    /// Same basis and weights, new control points.
    pub fn with_points(&self, points: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(self.bases.clone(), points, self.weights.clone())
    }

    pub fn map_points(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            bases: self.bases.clone(),
            points: self.points.iter().map(|&p| f(p)).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("net serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidNet(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetJson {
    degree: Vec<usize>,
    knots: Vec<Vec<f64>>,
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl Serialize for NurbsNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetJson {
            degree: self.bases.iter().map(KnotVector::degree).collect(),
            knots: self.bases.iter().map(|b| b.knots.clone()).collect(),
            points: self.points.clone(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NurbsNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = NetJson::deserialize(d)?;
        if raw.degree.len() != raw.knots.len() {
            return Err(D::Error::custom("degree and knots must list the same number of axes"));
        }
        let bases = raw
            .degree
            .into_iter()
            .zip(raw.knots)
            .map(|(deg, k)| KnotVector::new(deg, k))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        NurbsNet::new(bases, raw.points, raw.weights).map_err(D::Error::custom)
    }
}

/// Rational basis functions active at a point of the net's parameter domain.
#[derive(Debug, Clone)]
pub struct NurbsBasis {
    /// Global control-point indices.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Parametric gradients `(∂/∂ξ, ∂/∂η)`; empty when not requested. The η
    /// component is zero for curves.
    pub grads: Vec<[f64; 2]>,
}

/// Rational basis `R_i = w_i N_i / Σ w_j N_j` and (optionally) its first
/// parametric derivatives.
pub fn eval_nurbs_basis(net: &NurbsNet, xi: &[f64], n_derivs: usize) -> Result<NurbsBasis> {
    if xi.len() != net.n_axes() {
        return Err(Error::domain(format!(
            "{}-component parameter for a {}-axis net",
            xi.len(),
            net.n_axes()
        )));
    }
    if n_derivs > 1 {
        return Err(Error::Unsupported("rational derivatives beyond first order".into()));
    }
    let axes: Vec<BasisEval> = net
        .bases
        .iter()
        .zip(xi)
        .map(|(kv, &x)| eval_bspline_basis(kv, x, n_derivs))
        .collect::<Result<_>>()?;

    let mut indices = Vec::new();
    let mut n = Vec::new();
    let mut dn: Vec<[f64; 2]> = Vec::new();
    match axes.as_slice() {
        [u] => {
            for j in 0..u.ders[0].len() {
                indices.push(u.first + j);
                n.push(u.ders[0][j]);
                if n_derivs > 0 {
                    dn.push([u.ders[1][j], 0.0]);
                }
            }
        }
        [u, v] => {
            let nv = net.bases[1].n_basis();
            for a in 0..u.ders[0].len() {
                for b in 0..v.ders[0].len() {
                    indices.push((u.first + a) * nv + v.first + b);
                    n.push(u.ders[0][a] * v.ders[0][b]);
                    if n_derivs > 0 {
                        dn.push([u.ders[1][a] * v.ders[0][b], u.ders[0][a] * v.ders[1][b]]);
                    }
                }
            }
        }
        _ => unreachable!("axis count validated at construction"),
    }

    let w: Vec<f64> = indices.iter().map(|&i| net.weights[i]).collect();
    let total: f64 = n.iter().zip(&w).map(|(a, b)| a * b).sum();
    let values: Vec<f64> = n.iter().zip(&w).map(|(a, b)| a * b / total).collect();
    let mut grads = Vec::new();
    if n_derivs > 0 {
        let mut dtotal = [0.0; 2];
        for (g, wi) in dn.iter().zip(&w) {
            dtotal[0] += g[0] * wi;
            dtotal[1] += g[1] * wi;
        }
        grads = (0..n.len())
            .map(|i| {
                let f = |c: usize| w[i] * (dn[i][c] * total - n[i] * dtotal[c]) / (total * total);
                [f(0), f(1)]
            })
            .collect();
    }
    Ok(NurbsBasis { indices, values, grads })
}

/// Physical point and Jacobian `∂x/∂ξ` (columns: ξ, η) at a parameter point.
#[derive(Debug, Clone, Copy)]
pub struct PointEval {
    pub point: Vector2<f64>,
    pub jacobian: Matrix2<f64>,
}

pub fn eval_point(net: &NurbsNet, xi: &[f64]) -> Result<PointEval> {
    let basis = eval_nurbs_basis(net, xi, 1)?;
    Ok(point_from_basis(net.points(), &basis))
}

/// `Σ Rᵢ Pᵢ` and `Σ Pᵢ ⊗ ∇R_i` for an already evaluated basis and any
/// per-control-point vector data (points or velocities).
pub fn point_from_basis(points: &[[f64; 2]], basis: &NurbsBasis) -> PointEval {
    let mut point = Vector2::zeros();
    let mut jacobian = Matrix2::zeros();
    for ((&i, &r), g) in basis.indices.iter().zip(&basis.values).zip(&basis.grads) {
        let p = Vector2::new(points[i][0], points[i][1]);
        point += p * r;
        jacobian += p * Vector2::new(g[0], g[1]).transpose();
    }
    PointEval { point, jacobian }
}
