//! Discrete spaces on a patch and assembly of stiffness/mass matrices and their
//! shape derivatives.
//!
//! Every integral is pulled back to the reference square and evaluated with
//! `d + 1` Gauss–Legendre points per axis and element. Basis functions are
//! transformed to the physical domain first:
//!
//! * scalar H¹: value `u`, gradient `g = J⁻ᵀ ∇̂u`
//! * curl-conforming: field `v = J⁻ᵀ v̂` (covariant), scalar curl `c = ĉurl v̂ / det J`
//!
//! so that `K` and `M` become plain `∫ (·)(·) dx` sums with weight `w·det J`.
//! Shape derivatives use the current geometry as the undeformed domain and
//! differentiate the pullback factors at the identity, with `A' = ∂V/∂x`:
//!
//! ```text
//! d det    = tr A'
//! d J_K    = −tr A'                       (curl stiffness, J_K = 1/det)
//! d J_M    = tr A'·I − A' − A'ᵀ           (curl mass, scalar stiffness)
//! ```

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{refine_breakpoints, DisplacementField};
use crate::quadrature::gauss_on;
use crate::sparse::{CooBuilder, CsrMatrix};
use crate::splines::{eval_bspline_basis, eval_nurbs_basis, point_from_basis, KnotVector, NurbsNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceKind {
    /// Scalar H¹ with homogeneous Dirichlet values on the whole boundary.
    #[serde(rename = "scalar-h1-dirichlet")]
    ScalarH1Dirichlet,
    /// Two-component curl-conforming space with vanishing tangential trace.
    #[serde(rename = "curl-conforming")]
    CurlConforming,
}

/// One tensor-product component of a discrete space.
#[derive(Debug, Clone)]
pub struct Component {
    pub ku: KnotVector,
    pub kv: KnotVector,
    /// Local tensor index `iu * nv + iv` → free DoF number.
    free: Vec<Option<usize>>,
}

impl Component {
    pub fn n_total(&self) -> usize {
        self.free.len()
    }

    pub fn free_dof(&self, iu: usize, iv: usize) -> Option<usize> {
        self.free[iu * self.kv.n_basis() + iv]
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteSpace {
    kind: SpaceKind,
    degree: usize,
    level: usize,
    breakpoints: [Vec<f64>; 2],
    components: Vec<Component>,
    n_dof: usize,
}

impl DiscreteSpace {
    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n_dof(&self) -> usize {
        self.n_dof
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn breakpoints(&self) -> &[Vec<f64>; 2] {
        &self.breakpoints
    }

    pub fn n_elements(&self) -> [usize; 2] {
        [self.breakpoints[0].len() - 1, self.breakpoints[1].len() - 1]
    }

    /// Total functions before boundary elimination.
    pub fn n_total(&self) -> usize {
        self.components.iter().map(Component::n_total).sum()
    }

    fn quad_points(&self) -> usize {
        self.degree + 1
    }
}

/// Build a space whose breakpoints are the net's breakpoints with every span
/// split into `2^level` equal parts.
pub fn build_space(net: &NurbsNet, kind: SpaceKind, degree: usize, level: usize) -> Result<DiscreteSpace> {
    if net.n_axes() != 2 {
        return Err(Error::InvalidNet("discrete spaces need a two-axis net".into()));
    }
    match kind {
        SpaceKind::ScalarH1Dirichlet if degree < 1 => {
            return Err(Error::Unsupported("scalar spaces need degree ≥ 1".into()))
        }
        SpaceKind::CurlConforming if degree < 2 => {
            return Err(Error::Unsupported("curl-conforming spaces need degree ≥ 2".into()))
        }
        _ => {}
    }
    let bp = [
        refine_breakpoints(&net.bases()[0].breakpoints(), level),
        refine_breakpoints(&net.bases()[1].breakpoints(), level),
    ];
    let kvs = |du: usize, dv: usize| -> Result<(KnotVector, KnotVector)> {
        Ok((KnotVector::from_breakpoints(du, &bp[0])?, KnotVector::from_breakpoints(dv, &bp[1])?))
    };
    let mut next = 0usize;
    let mut component = |ku: KnotVector, kv: KnotVector, fixed: &dyn Fn(usize, usize, usize, usize) -> bool| {
        let (nu, nv) = (ku.n_basis(), kv.n_basis());
        let mut free = Vec::with_capacity(nu * nv);
        for iu in 0..nu {
            for iv in 0..nv {
                if fixed(iu, iv, nu, nv) {
                    free.push(None);
                } else {
                    free.push(Some(next));
                    next += 1;
                }
            }
        }
        Component { ku, kv, free }
    };
    let components = match kind {
        SpaceKind::ScalarH1Dirichlet => {
            let (ku, kv) = kvs(degree, degree)?;
            vec![component(ku, kv, &|iu, iv, nu, nv| iu == 0 || iv == 0 || iu + 1 == nu || iv + 1 == nv)]
        }
        SpaceKind::CurlConforming => {
            // first component points along ξ: tangential on the η = const edges
            let (ku0, kv0) = kvs(degree - 1, degree)?;
            let c0 = component(ku0, kv0, &|_, iv, _, nv| iv == 0 || iv + 1 == nv);
            let (ku1, kv1) = kvs(degree, degree - 1)?;
            let c1 = component(ku1, kv1, &|iu, _, nu, _| iu == 0 || iu + 1 == nu);
            vec![c0, c1]
        }
    };
    if next == 0 {
        return Err(Error::InvalidNet("space has no free degrees of freedom".into()));
    }
    Ok(DiscreteSpace {
        kind,
        degree,
        level,
        breakpoints: bp,
        components,
        n_dof: next,
    })
}

/// Symmetric stiffness and mass matrices over the free DoF.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPair {
    pub k: CsrMatrix,
    pub m: CsrMatrix,
}

impl SystemPair {
    pub fn n_dof(&self) -> usize {
        self.k.nrows()
    }
}

/// `dK/dpₙ`, `dM/dpₙ` for one design parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDerivative {
    pub dk: CsrMatrix,
    pub dm: CsrMatrix,
}

/// Derivatives of the pullback factors at `∂ₓG_p = I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JTermDerivatives {
    pub d_det: f64,
    pub d_jk: f64,
    pub d_jm: Matrix2<f64>,
}

pub fn jterm_derivatives(a: &Matrix2<f64>) -> JTermDerivatives {
    let tr = a.trace();
    JTermDerivatives {
        d_det: tr,
        d_jk: -tr,
        d_jm: Matrix2::identity() * tr - a - a.transpose(),
    }
}

/// Physical data of one active basis function at one quadrature point.
///
/// `s` is the scalar quantity (value for H¹, curl for the curl space) and `w`
/// the vector quantity (gradient for H¹, field for the curl space).
#[derive(Clone, Copy)]
struct FnData {
    dof: usize,
    s: f64,
    w: Vector2<f64>,
}

/// Geometry and basis data at one quadrature point of an element.
struct QpData {
    /// quadrature weight × det J
    wdet: f64,
    /// `A' = ∂V/∂x` per displacement field
    grads: Vec<Matrix2<f64>>,
    fns: Vec<FnData>,
}

fn element_qps(
    space: &DiscreteSpace,
    net: &NurbsNet,
    fields: &[DisplacementField],
    eu: [f64; 2],
    ev: [f64; 2],
) -> Result<Vec<QpData>> {
    let nq = space.quad_points();
    let mut out = Vec::with_capacity(nq * nq);
    for (u, wu) in gauss_on(eu[0], eu[1], nq) {
        for (v, wv) in gauss_on(ev[0], ev[1], nq) {
            let basis = eval_nurbs_basis(net, &[u, v], 1)?;
            let jac = point_from_basis(net.points(), &basis).jacobian;
            let det = jac.determinant();
            let jinv = match jac.try_inverse() {
                Some(inv) if det > 0.0 => inv,
                _ => return Err(Error::SingularJacobian { xi: u, eta: v, det }),
            };
            let jinv_t = jinv.transpose();
            let grads = fields
                .iter()
                .map(|f| point_from_basis(&f.velocities, &basis).jacobian * jinv)
                .collect();

            let mut fns = Vec::new();
            for (c, comp) in space.components.iter().enumerate() {
                let bu = eval_bspline_basis(&comp.ku, u, 1)?;
                let bv = eval_bspline_basis(&comp.kv, v, 1)?;
                for (a, (&nu, &du)) in bu.ders[0].iter().zip(&bu.ders[1]).enumerate() {
                    for (b, (&nv, &dv)) in bv.ders[0].iter().zip(&bv.ders[1]).enumerate() {
                        let Some(dof) = comp.free_dof(bu.first + a, bv.first + b) else {
                            continue;
                        };
                        let data = match (space.kind, c) {
                            (SpaceKind::ScalarH1Dirichlet, _) => FnData {
                                dof,
                                s: nu * nv,
                                w: jinv_t * Vector2::new(du * nv, nu * dv),
                            },
                            (SpaceKind::CurlConforming, 0) => FnData {
                                dof,
                                s: -nu * dv / det,
                                w: jinv_t * Vector2::new(nu * nv, 0.0),
                            },
                            (SpaceKind::CurlConforming, _) => FnData {
                                dof,
                                s: du * nv / det,
                                w: jinv_t * Vector2::new(0.0, nu * nv),
                            },
                        };
                        fns.push(data);
                    }
                }
            }
            out.push(QpData {
                wdet: wu * wv * det,
                grads,
                fns,
            });
        }
    }
    Ok(out)
}

/// Accumulates `∫ φ s_i s_j` and `∫ w_iᵀ Ψ w_j` over the upper triangle and
/// mirrors it, so the result is exactly symmetric.
struct FormPair {
    s_form: CooBuilder,
    w_form: CooBuilder,
}

impl FormPair {
    fn new(n: usize) -> Self {
        Self {
            s_form: CooBuilder::new(n, n),
            w_form: CooBuilder::new(n, n),
        }
    }

    fn add_element(&mut self, qps: &[QpData], s_weight: impl Fn(&QpData) -> f64, w_weight: impl Fn(&QpData) -> Matrix2<f64>) {
        let Some(first) = qps.first() else { return };
        let nloc = first.fns.len();
        let mut s_loc = vec![0.0; nloc * nloc];
        let mut w_loc = vec![0.0; nloc * nloc];
        for qp in qps {
            let sw = s_weight(qp) * qp.wdet;
            let ww = w_weight(qp) * qp.wdet;
            for i in 0..nloc {
                let fi = &qp.fns[i];
                let wi = ww * fi.w;
                for j in i..nloc {
                    let fj = &qp.fns[j];
                    s_loc[i * nloc + j] += sw * fi.s * fj.s;
                    w_loc[i * nloc + j] += wi.dot(&fj.w);
                }
            }
        }
        for i in 0..nloc {
            let di = first.fns[i].dof;
            for j in i..nloc {
                let dj = first.fns[j].dof;
                let (s, w) = (s_loc[i * nloc + j], w_loc[i * nloc + j]);
                self.s_form.push(di, dj, s);
                self.w_form.push(di, dj, w);
                if i != j {
                    self.s_form.push(dj, di, s);
                    self.w_form.push(dj, di, w);
                }
            }
        }
    }

    /// `(K, M)` for the space kind.
    fn finish(self, kind: SpaceKind) -> (CsrMatrix, CsrMatrix) {
        let (s, w) = (self.s_form.into_csr(), self.w_form.into_csr());
        match kind {
            SpaceKind::ScalarH1Dirichlet => (w, s),
            SpaceKind::CurlConforming => (s, w),
        }
    }
}

fn elements(space: &DiscreteSpace) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    let [bu, bv] = &space.breakpoints;
    bu.windows(2)
        .flat_map(move |eu| bv.windows(2).map(move |ev| ([eu[0], eu[1]], [ev[0], ev[1]])))
}

pub fn assemble(space: &DiscreteSpace, net: &NurbsNet) -> Result<SystemPair> {
    let mut forms = FormPair::new(space.n_dof);
    for (eu, ev) in elements(space) {
        let qps = element_qps(space, net, &[], eu, ev)?;
        forms.add_element(&qps, |_| 1.0, |_| Matrix2::identity());
    }
    let (k, m) = forms.finish(space.kind);
    Ok(SystemPair { k, m })
}

/// Closed-form `dK/dpₙ`, `dM/dpₙ`, one pair per displacement field. The
/// fields must live on `net` (same control-point layout).
pub fn assemble_derivatives(space: &DiscreteSpace, net: &NurbsNet, fields: &[DisplacementField]) -> Result<Vec<SystemDerivative>> {
    if let Some(f) = fields.iter().find(|f| f.velocities.len() != net.points().len()) {
        return Err(Error::InvalidNet(format!(
            "displacement field has {} velocities for {} control points",
            f.velocities.len(),
            net.points().len()
        )));
    }
    let mut forms: Vec<FormPair> = fields.iter().map(|_| FormPair::new(space.n_dof)).collect();
    let s_sign = match space.kind {
        // scalar mass factor det → tr A'; curl stiffness factor 1/det → −tr A'
        SpaceKind::ScalarH1Dirichlet => 1.0,
        SpaceKind::CurlConforming => -1.0,
    };
    for (eu, ev) in elements(space) {
        let qps = element_qps(space, net, fields, eu, ev)?;
        for (n, form) in forms.iter_mut().enumerate() {
            form.add_element(
                &qps,
                |qp| s_sign * qp.grads[n].trace(),
                |qp| jterm_derivatives(&qp.grads[n]).d_jm,
            );
        }
    }
    Ok(forms
        .into_iter()
        .map(|f| {
            let (dk, dm) = f.finish(space.kind);
            SystemDerivative { dk, dm }
        })
        .collect())
}

/// Unconstrained scalar H¹ matrices of a 1-D spline space mapped affinely onto `[a, b]`.
pub fn assemble_interval(kv: &KnotVector, a: f64, b: f64) -> Result<SystemPair> {
    let n = kv.n_basis();
    let (lo, hi) = kv.domain();
    let scale = (b - a) / (hi - lo);
    if !(scale > 0.0) {
        return Err(Error::domain("interval must have positive length"));
    }
    let mut k = CooBuilder::new(n, n);
    let mut m = CooBuilder::new(n, n);
    for e in kv.breakpoints().windows(2) {
        for (x, w) in gauss_on(e[0], e[1], kv.degree() + 1) {
            let basis = eval_bspline_basis(kv, x, 1)?;
            let d = kv.degree() + 1;
            for i in 0..d {
                for j in 0..d {
                    let (gi, gj) = (basis.first + i, basis.first + j);
                    m.push(gi, gj, w * scale * basis.ders[0][i] * basis.ders[0][j]);
                    k.push(gi, gj, w / scale * basis.ders[1][i] * basis.ders[1][j]);
                }
            }
        }
    }
    Ok(SystemPair {
        k: k.into_csr(),
        m: m.into_csr(),
    })
}

/// Value of a discrete field at a reference point, pushed forward to the
/// physical domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Scalar(f64),
    Vector(Vector2<f64>),
}

pub fn eval_field(space: &DiscreteSpace, net: &NurbsNet, coeffs: &[f64], xi: [f64; 2]) -> Result<FieldValue> {
    if coeffs.len() != space.n_dof {
        return Err(Error::domain(format!(
            "coefficient vector of length {} for a space with {} DoF",
            coeffs.len(),
            space.n_dof
        )));
    }
    let mut parts = [0.0f64; 2];
    for (c, comp) in space.components.iter().enumerate() {
        let bu = eval_bspline_basis(&comp.ku, xi[0], 0)?;
        let bv = eval_bspline_basis(&comp.kv, xi[1], 0)?;
        for (a, nu) in bu.values().iter().enumerate() {
            for (b, nv) in bv.values().iter().enumerate() {
                if let Some(dof) = comp.free_dof(bu.first + a, bv.first + b) {
                    parts[c] += coeffs[dof] * nu * nv;
                }
            }
        }
    }
    match space.kind {
        SpaceKind::ScalarH1Dirichlet => Ok(FieldValue::Scalar(parts[0])),
        SpaceKind::CurlConforming => {
            let basis = eval_nurbs_basis(net, &xi, 1)?;
            let jac = point_from_basis(net.points(), &basis).jacobian;
            let det = jac.determinant();
            let inv = jac
                .try_inverse()
                .filter(|_| det > 0.0)
                .ok_or(Error::SingularJacobian { xi: xi[0], eta: xi[1], det })?;
            Ok(FieldValue::Vector(inv.transpose() * Vector2::new(parts[0], parts[1])))
        }
    }
}
