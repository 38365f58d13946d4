//! Parameter-to-spectrum models used by the objective and the optimizer.
//!
//! [`DiscreteModel`] runs the full pipeline (family net → assembly → GEVP →
//! bordered sensitivities). [`PillboxModel`] is the closed-form cylinder
//! catalog: its "eigenvectors" are unit vectors over the mode catalog with an
//! identity mass, so correlation tracking reduces to following a label.

use nalgebra::DMatrix;

use crate::assembly::{assemble, assemble_derivatives, build_space, DiscreteSpace, SpaceKind, SystemDerivative, SystemPair};
use crate::eigen::{solve_gevp_with, EigenSolution, GevpOptions, KernelReport};
use crate::error::{Error, Result};
use crate::geometry::GeometryFamily;
use crate::objective::{field_on_axis, AxisSample};
use crate::oracle::{CylinderMode, PillboxSpec};
use crate::sensitivity::{eigenpair_derivatives, DEFAULT_GAP_TOL};
use crate::sparse::CsrMatrix;
use crate::splines::NurbsNet;

/// Everything computed at one parameter point.
#[derive(Debug, Clone)]
pub struct ModalState {
    pub p: Vec<f64>,
    pub solution: EigenSolution,
    pub mass: CsrMatrix,
    /// Mode names, where the model knows them.
    pub labels: Option<Vec<String>>,
    pub discrete: Option<DiscreteState>,
}

#[derive(Debug, Clone)]
pub struct DiscreteState {
    pub net: NurbsNet,
    pub system: SystemPair,
}

impl ModalState {
    pub fn label(&self, k: usize) -> Option<&str> {
        self.labels.as_ref().and_then(|l| l.get(k)).map(String::as_str)
    }
}

pub trait SpectralModel {
    fn n_params(&self) -> usize;

    /// Physical parameter bounds.
    fn bounds(&self) -> Vec<[f64; 2]>;

    fn solve(&self, p: &[f64]) -> Result<ModalState>;

    /// `dλ_k/dpₙ` with respect to normalized parameters.
    fn eigenvalue_gradient(&self, state: &ModalState, k: usize) -> Result<Vec<f64>>;

    /// Cell windows on the reference axis (empty if the model has none).
    fn cells(&self) -> Vec<[f64; 2]> {
        Vec::new()
    }

    fn axis_field(&self, _state: &ModalState, _k: usize, _n_samples: usize) -> Result<Vec<AxisSample>> {
        Err(Error::Unsupported("this model has no field representation".into()))
    }

    fn physical(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(self.bounds()).map(|(x, b)| b[0] + (b[1] - b[0]) * x).collect()
    }

    fn check_box(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::domain(format!("{} parameters given, model has {}", p.len(), self.n_params())));
        }
        if let Some((n, x)) = p.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
            return Err(Error::domain(format!("parameter {n} = {x} outside [0, 1]")));
        }
        Ok(())
    }
}

pub struct DiscreteModel {
    family: GeometryFamily,
    space: DiscreteSpace,
    gevp: GevpOptions,
    velocity_step: Option<f64>,
    gap_tol: f64,
}

impl DiscreteModel {
    pub fn new(family: GeometryFamily, kind: SpaceKind, degree: usize, level: usize, n_wanted: usize) -> Result<Self> {
        let space = build_space(family.base_net(), kind, degree, level)?;
        Ok(Self {
            family,
            space,
            gevp: GevpOptions {
                n_wanted,
                ..Default::default()
            },
            velocity_step: None,
            gap_tol: DEFAULT_GAP_TOL,
        })
    }

    /// Fixed one-sided difference step for nonlinear families instead of the default.
    pub fn with_velocity_step(mut self, step: Option<f64>) -> Self {
        self.velocity_step = step;
        self
    }

    pub fn with_gevp_options(mut self, opts: GevpOptions) -> Self {
        self.gevp = opts;
        self
    }

    pub fn family(&self) -> &GeometryFamily {
        &self.family
    }

    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn system(&self, p: &[f64]) -> Result<(NurbsNet, SystemPair)> {
        let net = self.family.family_net(p)?;
        let sys = assemble(&self.space, &net)?;
        Ok((net, sys))
    }

    /// Closed-form `dK/dpₙ`, `dM/dpₙ` for every parameter at `p`.
    pub fn system_derivatives(&self, p: &[f64]) -> Result<Vec<SystemDerivative>> {
        let fields = (0..self.family.n_params())
            .map(|n| match self.velocity_step {
                Some(step) if !self.family.is_affine() => self.family.control_velocity(p, n, step),
                _ => self.family.velocity(p, n),
            })
            .collect::<Result<Vec<_>>>()?;
        let net = &fields[0].net;
        assemble_derivatives(&self.space, net, &fields)
    }
}

impl SpectralModel for DiscreteModel {
    fn n_params(&self) -> usize {
        self.family.n_params()
    }

    fn bounds(&self) -> Vec<[f64; 2]> {
        self.family.bounds().to_vec()
    }

    fn solve(&self, p: &[f64]) -> Result<ModalState> {
        let (net, system) = self.system(p)?;
        let solution = solve_gevp_with(&system, &self.gevp)?;
        Ok(ModalState {
            p: p.to_vec(),
            solution,
            mass: system.m.clone(),
            labels: None,
            discrete: Some(DiscreteState { net, system }),
        })
    }

    fn eigenvalue_gradient(&self, state: &ModalState, k: usize) -> Result<Vec<f64>> {
        let disc = state
            .discrete
            .as_ref()
            .ok_or_else(|| Error::domain("state does not come from a discrete model"))?;
        let dsys = self.system_derivatives(&state.p)?;
        let sens = eigenpair_derivatives(&disc.system, &dsys, &state.solution, k, None, self.gap_tol)?;
        Ok(sens.dlambda)
    }

    fn cells(&self) -> Vec<[f64; 2]> {
        self.family.cells().to_vec()
    }

    fn axis_field(&self, state: &ModalState, k: usize, n_samples: usize) -> Result<Vec<AxisSample>> {
        let disc = state
            .discrete
            .as_ref()
            .ok_or_else(|| Error::domain("state does not come from a discrete model"))?;
        field_on_axis(&self.space, &disc.net, &state.solution.vector(k), n_samples)
    }
}

/// Closed-form pillbox spectrum with the radius as the only parameter.
pub struct PillboxModel {
    length: f64,
    radius_bounds: [f64; 2],
    modes: Vec<CylinderMode>,
    roots: Vec<f64>,
}

impl PillboxModel {
    pub fn new(length: f64, radius_bounds: [f64; 2], modes: Vec<CylinderMode>) -> Result<Self> {
        if !(length > 0.0 && radius_bounds[0] > 0.0 && radius_bounds[0] < radius_bounds[1]) {
            return Err(Error::domain("pillbox needs a positive length and increasing positive radius bounds"));
        }
        if modes.is_empty() {
            return Err(Error::domain("pillbox mode catalog is empty"));
        }
        let roots = modes.iter().map(CylinderMode::root).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            length,
            radius_bounds,
            modes,
            roots,
        })
    }

    /// TM010, TE111 and the next modes above them at radii of a few centimetres.
    pub fn default_catalog() -> Vec<CylinderMode> {
        ["TM010", "TE111", "TM011", "TE211", "TM110", "TE011", "TM111", "TE112"]
            .iter()
            .map(|s| s.parse().expect("valid built-in label"))
            .collect()
    }

    pub fn radius(&self, p: f64) -> f64 {
        self.radius_bounds[0] + (self.radius_bounds[1] - self.radius_bounds[0]) * p
    }

    /// Catalog positions sorted by eigenvalue, ties kept in catalog order.
    fn order(&self, spec: &PillboxSpec) -> (Vec<usize>, Vec<f64>) {
        let lambdas: Vec<f64> = self
            .modes
            .iter()
            .zip(&self.roots)
            .map(|(m, &j)| m.lambda_with_root(j, spec))
            .collect();
        let mut order: Vec<usize> = (0..self.modes.len()).collect();
        order.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]).then(a.cmp(&b)));
        (order, lambdas)
    }
}

impl SpectralModel for PillboxModel {
    fn n_params(&self) -> usize {
        1
    }

    fn bounds(&self) -> Vec<[f64; 2]> {
        vec![self.radius_bounds]
    }

    fn solve(&self, p: &[f64]) -> Result<ModalState> {
        self.check_box(p)?;
        let spec = PillboxSpec::new(self.radius(p[0]), self.length)?;
        let (order, lambdas) = self.order(&spec);
        let n = self.modes.len();
        let mut vectors = DMatrix::zeros(n, n);
        for (j, &i) in order.iter().enumerate() {
            vectors[(i, j)] = 1.0;
        }
        let eigenvalues: Vec<f64> = order.iter().map(|&i| lambdas[i]).collect();
        let largest = *eigenvalues.last().expect("non-empty catalog");
        Ok(ModalState {
            p: p.to_vec(),
            solution: EigenSolution {
                eigenvalues,
                vectors,
                kernel: KernelReport {
                    kernel_cut: 0,
                    threshold: 0.0,
                    largest_kernel_eigenvalue: None,
                    largest_eigenvalue: largest,
                },
                clusters: Vec::new(),
            },
            mass: CsrMatrix::identity(n),
            labels: Some(order.iter().map(|&i| self.modes[i].to_string()).collect()),
            discrete: None,
        })
    }

    /// `dλ/dp = −2 j² / r³ · dr/dp`.
    fn eigenvalue_gradient(&self, state: &ModalState, k: usize) -> Result<Vec<f64>> {
        let col = state.solution.vectors.column(k);
        let i = col.iter().position(|&v| v == 1.0).ok_or_else(|| Error::domain("not a pillbox state"))?;
        let r = self.radius(state.p[0]);
        let j = self.roots[i];
        Ok(vec![-2.0 * j * j / r.powi(3) * (self.radius_bounds[1] - self.radius_bounds[0])])
    }
}
