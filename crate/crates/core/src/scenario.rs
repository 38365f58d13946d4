//! Scenario descriptions and the drivers behind the command-line subcommands.
//!
//! A scenario names a model (closed-form pillbox or a discrete geometry
//! family), an objective, optimizer settings, a start point and the 1-based
//! index of the wanted mode there. Drivers return plain data; writing files is
//! left to the caller.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::{SpaceKind, SystemPair};
use crate::eigen::lambda_to_freq_vacuum;
use crate::error::{Error, Result};
use crate::geometry::{ChainDims, FamilyKind, GeometryFamily};
use crate::model::{DiscreteModel, ModalState, PillboxModel, SpectralModel};
use crate::objective::{flatness, AxisSample, Evaluation, FlatnessReport, ObjectiveSpec, Problem, Terms};
use crate::optimizer::{optimize as run_optimizer, Aborted, OptimizerConfig, RunResult};
use crate::oracle::CylinderMode;
use crate::sparse::CsrMatrix;
use crate::splines::NurbsNet;
use crate::tracking::TrackerState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelConfig,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_tracking")]
    pub tracking: bool,
    pub start: StartConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_tracking() -> bool {
    true
}

fn default_n_wanted() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Closed-form cylinder spectrum; the radius is the only parameter.
    Pillbox {
        length: f64,
        radius_bounds: [f64; 2],
        #[serde(default)]
        modes: Option<Vec<CylinderMode>>,
    },
    Discrete {
        family: FamilyConfig,
        space: SpaceConfig,
        #[serde(default = "default_n_wanted")]
        n_wanted: usize,
        /// Control-point difference step for nonlinear families.
        #[serde(default)]
        velocity_step: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyConfig {
    ScaledRectangle {
        width: [f64; 2],
        height: f64,
    },
    MultiCellChain {
        dims: ChainDims,
        bounds: Vec<[f64; 2]>,
    },
    ExplicitControlPath {
        base_net: NetSource,
        bounds: Vec<[f64; 2]>,
        directions: Vec<Vec<[f64; 2]>>,
        #[serde(default)]
        cells: Vec<[f64; 2]>,
    },
}

/// A net given inline or as a path relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetSource {
    Inline(NurbsNet),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub kind: SpaceKind,
    pub degree: usize,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    /// Normalized start parameters.
    pub p: Vec<f64>,
    /// 1-based index of the wanted mode at `p`.
    pub mode: usize,
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { pointer, message } => Error::config(format!("{prefix}{pointer}"), message),
        Error::InvalidNet(m) | Error::InvalidKnots(m) | Error::Unsupported(m) => Error::config(prefix, m),
        other => other,
    }
}

impl ScenarioConfig {
    /// Parse and validate; unknown keys and type errors carry a JSON pointer.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            Error::config(pointer, e.inner().to_string())
        })?;
        cfg.resolve_files(base_dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_files(&mut self, base_dir: &Path) -> Result<()> {
        if let ModelConfig::Discrete {
            family: FamilyConfig::ExplicitControlPath { base_net, .. },
            ..
        } = &mut self.model
        {
            if let NetSource::File(rel) = base_net {
                let path = base_dir.join(&*rel);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::config("/model/family/base_net", format!("cannot read {}: {e}", path.display())))?;
                let net = NurbsNet::from_json(&text).map_err(|e| prefixed("/model/family/base_net", e))?;
                *base_net = NetSource::Inline(net);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate().map_err(|e| prefixed("/optimizer", e))?;
        let model = self.build_model()?;
        let n = model.n_params();
        self.objective.validate(n).map_err(|e| prefixed("/objective", e))?;
        if self.start.p.len() != n {
            return Err(Error::config("/start/p", format!("{} values given, the model has {n} parameters", self.start.p.len())));
        }
        if let Some(i) = self.start.p.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::config(format!("/start/p/{i}"), "outside [0, 1]"));
        }
        if self.start.mode == 0 {
            return Err(Error::config("/start/mode", "mode indices are 1-based"));
        }
        if let ObjectiveSpec::FlatnessCombined { .. } = self.objective {
            if model.cells().is_empty() {
                return Err(Error::config("/objective/variant", "flatness needs a family with cell windows"));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<Box<dyn SpectralModel>> {
        match &self.model {
            ModelConfig::Pillbox {
                length,
                radius_bounds,
                modes,
            } => {
                let modes = modes.clone().unwrap_or_else(PillboxModel::default_catalog);
                Ok(Box::new(
                    PillboxModel::new(*length, *radius_bounds, modes).map_err(|e| Error::config("/model", e.to_string()))?,
                ))
            }
            ModelConfig::Discrete { .. } => Ok(Box::new(self.discrete_model()?.expect("discrete config"))),
        }
    }

    /// The concrete discrete model behind a discrete scenario; `None` for the pillbox.
    pub fn discrete_model(&self) -> Result<Option<DiscreteModel>> {
        let ModelConfig::Discrete {
            family,
            space,
            n_wanted,
            velocity_step,
        } = &self.model
        else {
            return Ok(None);
        };
        let family = build_family(family).map_err(|e| prefixed("/model/family", e))?;
        if *n_wanted == 0 {
            return Err(Error::config("/model/n_wanted", "at least one mode"));
        }
        if let Some(s) = velocity_step {
            if !(*s > 0.0) {
                return Err(Error::config("/model/velocity_step", "must be positive"));
            }
        }
        let model = DiscreteModel::new(family, space.kind, space.degree, space.level, *n_wanted)
            .map_err(|e| prefixed("/model/space", e))?
            .with_velocity_step(*velocity_step);
        Ok(Some(model))
    }

    /// Discrete model with a different control-point difference step.
    fn discrete_with_step(&self, step: f64) -> Result<Option<DiscreteModel>> {
        match &self.model {
            ModelConfig::Discrete {
                family, space, n_wanted, ..
            } => {
                let family = build_family(family)?;
                Ok(Some(
                    DiscreteModel::new(family, space.kind, space.degree, space.level, *n_wanted)?.with_velocity_step(Some(step)),
                ))
            }
            ModelConfig::Pillbox { .. } => Ok(None),
        }
    }

    pub fn start_index(&self) -> usize {
        self.start.mode - 1
    }

    /// Reference frequency of the objective, if it has one.
    pub fn f_ref(&self) -> Option<f64> {
        match &self.objective {
            ObjectiveSpec::SquaredErrorLambda { lambda_ref, f_ref } => {
                f_ref.or_else(|| lambda_ref.and_then(|l| lambda_to_freq_vacuum(l).ok()))
            }
            ObjectiveSpec::SquaredErrorFPenalty { f_ref, .. } | ObjectiveSpec::FlatnessCombined { f_ref, .. } => Some(*f_ref),
        }
    }

    fn problem<'a>(&self, model: &'a dyn SpectralModel) -> Result<Problem<'a>> {
        let spec = self.objective.clone().with_default_reference(&self.start.p);
        Problem::new(model, spec, self.start_index(), self.tracking)
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

fn build_family(cfg: &FamilyConfig) -> Result<GeometryFamily> {
    match cfg {
        FamilyConfig::ScaledRectangle { width, height } => GeometryFamily::scaled_rectangle(*width, *height),
        FamilyConfig::MultiCellChain { dims, bounds } => GeometryFamily::chain(dims.clone(), bounds.clone()),
        FamilyConfig::ExplicitControlPath {
            base_net,
            bounds,
            directions,
            cells,
        } => {
            let NetSource::Inline(net) = base_net else {
                return Err(Error::config("/base_net", "net file was not resolved"));
            };
            GeometryFamily::new(
                FamilyKind::ExplicitControlPath {
                    directions: directions.clone(),
                },
                bounds.clone(),
                cells.clone(),
                net.clone(),
            )
        }
    }
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeRow {
    /// 1-based.
    pub k: usize,
    pub lambda: f64,
    pub f: f64,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub p: Vec<f64>,
    pub p_physical: Vec<f64>,
    pub modes: Vec<ModeRow>,
    pub kernel_cut: usize,
    pub max_residual: Option<f64>,
    pub orthonormality_error: Option<f64>,
}

fn mode_rows(state: &ModalState) -> Result<Vec<ModeRow>> {
    state
        .solution
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            Ok(ModeRow {
                k: k + 1,
                lambda: l,
                f: lambda_to_freq_vacuum(l.max(0.0))?,
                label: state.label(k).map(str::to_owned),
            })
        })
        .collect()
}

pub fn solve(cfg: &ScenarioConfig, p: &[f64]) -> Result<SolveReport> {
    let model = cfg.build_model()?;
    model.check_box(p)?;
    let state = model.solve(p)?;
    let (res, orth) = match &state.discrete {
        Some(d) => (
            Some(crate::eigen::max_residual(&d.system, &state.solution)),
            Some(crate::eigen::orthonormality_error(&d.system.m, &state.solution)),
        ),
        None => (None, None),
    };
    Ok(SolveReport {
        p: p.to_vec(),
        p_physical: model.physical(p),
        modes: mode_rows(&state)?,
        kernel_cut: state.solution.kernel.kernel_cut,
        max_residual: res,
        orthonormality_error: orth,
    })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub p_physical: f64,
    pub freqs: Vec<f64>,
    pub f_tracked: f64,
    /// 1-based.
    pub k_tracked: usize,
    pub phi: Option<f64>,
    pub label_tracked: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub param: usize,
    pub rows: Vec<SweepRow>,
    pub warnings: Vec<String>,
}

/// Sample parameter `param` over its box with the others held at the start
/// point. A single sample evaluates the start point itself. With tracking the
/// tracker is seeded at the start point and walks outward in both
/// directions, committing every sample.
pub fn sweep(cfg: &ScenarioConfig, param: usize, samples: usize) -> Result<SweepTable> {
    let model = cfg.build_model()?;
    let n = model.n_params();
    if param >= n {
        return Err(Error::config("/param", format!("parameter index {param} outside 0..{n}")));
    }
    if samples == 0 {
        return Err(Error::config("/samples", "at least one sample"));
    }
    let p0 = &cfg.start.p;
    let at = |t: f64| {
        let mut p = p0.clone();
        p[param] = t;
        p
    };
    let ts: Vec<f64> = if samples == 1 {
        vec![p0[param]]
    } else {
        (0..samples).map(|i| i as f64 / (samples - 1) as f64).collect()
    };
    let states = ts.iter().map(|&t| model.solve(&at(t))).collect::<Result<Vec<_>>>()?;
    let n_freq = states.iter().map(|s| s.solution.len()).min().unwrap_or(0);
    let start = cfg.start_index();
    if start >= n_freq {
        return Err(Error::config("/start/mode", format!("mode {} not among the {n_freq} reported modes", start + 1)));
    }

    let mut picks: Vec<(usize, Option<f64>)> = vec![(start, None); ts.len()];
    let mut warnings = Vec::new();
    if cfg.tracking {
        let seed_state = model.solve(p0)?;
        let seed = TrackerState::new(&seed_state.solution, &seed_state.mass, start)?;
        let split = ts.iter().position(|&t| t >= p0[param]).unwrap_or(ts.len());
        let up: Vec<usize> = (split..ts.len()).collect();
        let down: Vec<usize> = (0..split).rev().collect();
        for walk in [down, up] {
            let mut tracker = seed.clone();
            for i in walk {
                let st = &states[i];
                let sel = tracker.select(&st.solution, &st.mass)?;
                if let Some(w) = tracker.commit(i + 1, &sel, &st.solution, &st.mass) {
                    warnings.push(w);
                }
                picks[i] = (sel.index, Some(sel.phi));
            }
        }
    }

    let bounds = model.bounds()[param];
    let rows = ts
        .iter()
        .zip(&states)
        .zip(&picks)
        .map(|((&t, st), &(k, phi))| {
            let freqs = st.solution.eigenvalues[..n_freq]
                .iter()
                .map(|&l| lambda_to_freq_vacuum(l.max(0.0)))
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow {
                p: t,
                p_physical: bounds[0] + (bounds[1] - bounds[0]) * t,
                f_tracked: freqs[k],
                freqs,
                k_tracked: k + 1,
                phi,
                label_tracked: st.label(k).map(str::to_owned),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { param, rows, warnings })
}

// ---------------------------------------------------------------- optimize

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub p: Vec<f64>,
    pub p_physical: Vec<f64>,
    pub g: f64,
    pub terms: Terms,
    pub f: f64,
    pub lambda: f64,
    /// 1-based.
    pub k: usize,
    pub label: Option<String>,
    pub phi: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub peaks: Option<Vec<f64>>,
}

impl PointSummary {
    fn from_eval(model: &dyn SpectralModel, e: &Evaluation) -> Self {
        Self {
            p: e.p.clone(),
            p_physical: model.physical(&e.p),
            g: e.g,
            terms: e.terms,
            f: e.f,
            lambda: e.lambda,
            k: e.k + 1,
            label: e.label.clone(),
            phi: e.phi,
            eta1: e.flatness.as_ref().map(|r| r.eta1),
            eta2: e.flatness.as_ref().map(|r| r.eta2),
            peaks: e.flatness.as_ref().map(|r| r.peaks.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeOutcome {
    pub run: RunResult,
    pub start: PointSummary,
    pub end: PointSummary,
    pub f_ref: Option<f64>,
    pub relative_error: Option<f64>,
    /// Every point handed to the pipeline during the run, probes included.
    #[serde(skip)]
    pub evaluated: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub enum OptimizeError {
    /// Rejected before any computation.
    Setup(Error),
    Aborted(Box<Aborted>),
}

impl OptimizeError {
    pub fn error(&self) -> &Error {
        match self {
            Self::Setup(e) => e,
            Self::Aborted(a) => &a.error,
        }
    }
}

impl std::fmt::Display for OptimizeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error().fmt(f)
    }
}

pub fn optimize(cfg: &ScenarioConfig) -> std::result::Result<OptimizeOutcome, OptimizeError> {
    let model = cfg.build_model().map_err(OptimizeError::Setup)?;
    let start = {
        let mut probe = cfg.problem(model.as_ref()).map_err(OptimizeError::Setup)?;
        let e = probe.evaluate(&cfg.start.p).map_err(|e| {
            OptimizeError::Aborted(Box::new(Aborted {
                error: e,
                partial: empty_run(&cfg.start.p),
            }))
        })?;
        PointSummary::from_eval(model.as_ref(), &e)
    };
    let mut problem = cfg.problem(model.as_ref()).map_err(OptimizeError::Setup)?;
    let run = run_optimizer(&mut problem, &cfg.start.p, &cfg.optimizer).map_err(OptimizeError::Aborted)?;
    let evaluated = problem.evaluated_points().to_vec();
    // Re-evaluated against the committed tracker; not part of the run's counts.
    let end = problem.evaluate(&run.p_opt).map_err(|e| {
        OptimizeError::Aborted(Box::new(Aborted {
            error: e,
            partial: run.clone(),
        }))
    })?;
    let end = PointSummary::from_eval(model.as_ref(), &end);
    let f_ref = cfg.f_ref();
    let relative_error = f_ref.filter(|f| *f > 0.0).map(|fr| (end.f - fr).abs() / fr);
    Ok(OptimizeOutcome {
        run,
        start,
        end,
        f_ref,
        relative_error,
        evaluated,
    })
}

fn empty_run(p: &[f64]) -> RunResult {
    RunResult {
        p_opt: p.to_vec(),
        g_opt: f64::NAN,
        f_opt: None,
        iterations: 0,
        function_calls: 0,
        gradient_calls: 0,
        stop: crate::optimizer::StopReason::Aborted,
        log: Vec::new(),
        warnings: Vec::new(),
        wall_time_s: 0.0,
    }
}

// ---------------------------------------------------------------- derivative check

/// Relative difference step used for every central difference in the check.
pub const CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub parameter: usize,
    /// `dK`, `dM`, `dlambda` or `dg`.
    pub quantity: &'static str,
    pub closed_form_norm: f64,
    pub fd_norm: f64,
    pub rel_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RichardsonEntry {
    pub parameter: usize,
    pub delta: f64,
    pub error: f64,
    pub half_delta_error: f64,
    /// `error / half_delta_error`; about 2 for a first-order difference.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub p: Vec<f64>,
    /// 1-based.
    pub mode: usize,
    pub fd_step: f64,
    pub affine: bool,
    pub checks: Vec<DerivativeCheck>,
    pub richardson: Vec<RichardsonEntry>,
    pub pass: bool,
}

/// Central difference points `p ± h` in component `i`, shifted to stay inside the box.
fn central_pair(p: &[f64], i: usize, h: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let lo = (p[i] - h).max(0.0);
    let hi = (lo + 2.0 * h).min(1.0);
    let lo = (hi - 2.0 * h).max(0.0);
    let (mut a, mut b) = (p.to_vec(), p.to_vec());
    a[i] = lo;
    b[i] = hi;
    (a, b, hi - lo)
}

fn rel(cf: f64, fd: f64, floor: f64) -> f64 {
    (cf - fd).abs() / fd.abs().max(floor)
}

fn matrix_rel(cf: &CsrMatrix, fd: &CsrMatrix, floor: f64) -> f64 {
    cf.distance(fd) / fd.frobenius_norm().max(floor)
}

/// Closed-form `dK`, `dM`, `dλ` and `dg` against central differences at the
/// start point.
pub fn check_derivatives(cfg: &ScenarioConfig) -> Result<DerivativeReport> {
    let model = cfg.build_model()?;
    let p = cfg.start.p.clone();
    let k = cfg.start_index();
    let affine = match &cfg.model {
        ModelConfig::Pillbox { .. } => true,
        ModelConfig::Discrete { family, .. } => build_family(family)?.is_affine(),
    };
    let flat = matches!(cfg.objective, ObjectiveSpec::FlatnessCombined { .. });
    let (t_mat, t_lambda, t_g) = match (affine, flat) {
        (true, false) => (1e-6, 1e-5, 1e-5),
        (true, true) => (1e-6, 1e-5, 1e-3),
        (false, false) => (1e-4, 1e-4, 1e-4),
        (false, true) => (1e-4, 1e-4, 1e-3),
    };
    let h = CHECK_STEP;
    let mut checks = Vec::new();
    let mut push = |parameter, quantity, cf: f64, fd: f64, err: f64, threshold: f64| {
        checks.push(DerivativeCheck {
            parameter,
            quantity,
            closed_form_norm: cf,
            fd_norm: fd,
            rel_error: err,
            threshold,
            pass: err <= threshold,
        })
    };

    let state = model.solve(&p)?;
    if k >= state.solution.len() {
        return Err(Error::config("/start/mode", format!("mode {} not among the reported modes", k + 1)));
    }
    let lambda = state.solution.eigenvalues[k];

    // matrices (discrete models only)
    let discrete = cfg.discrete_with_step(velocity_step_or_default(cfg))?;
    if let (Some(dm), Some(disc)) = (&discrete, &state.discrete) {
        let dsys = dm.system_derivatives(&p)?;
        let SystemPair { k: k0, m: m0 } = &disc.system;
        for (i, d) in dsys.iter().enumerate() {
            let (a, b, w) = central_pair(&p, i, h);
            let (_, sa) = dm.system(&a)?;
            let (_, sb) = dm.system(&b)?;
            let fd_k = sb.k.lincomb(1.0 / w, &sa.k, -1.0 / w);
            let fd_m = sb.m.lincomb(1.0 / w, &sa.m, -1.0 / w);
            let ek = matrix_rel(&d.dk, &fd_k, 1e-3 * k0.frobenius_norm());
            let em = matrix_rel(&d.dm, &fd_m, 1e-3 * m0.frobenius_norm());
            push(i, "dK", d.dk.frobenius_norm(), fd_k.frobenius_norm(), ek, t_mat);
            push(i, "dM", d.dm.frobenius_norm(), fd_m.frobenius_norm(), em, t_mat);
        }
    }

    // eigenvalue of the wanted index
    let dl = model.eigenvalue_gradient(&state, k)?;
    let mut fd_lambda = Vec::with_capacity(p.len());
    for (i, &cf) in dl.iter().enumerate() {
        let (a, b, w) = central_pair(&p, i, h);
        let la = model.solve(&a)?.solution.eigenvalues[k];
        let lb = model.solve(&b)?.solution.eigenvalues[k];
        let fd = (lb - la) / w;
        fd_lambda.push(fd);
        push(i, "dlambda", cf.abs(), fd.abs(), rel(cf, fd, 1e-3 * lambda.abs()), t_lambda);
    }

    // objective
    let mut problem = cfg.problem(model.as_ref())?;
    let e0 = problem.evaluate(&p)?;
    problem.accept(0, &e0);
    let grad = problem.gradient(&e0, cfg.optimizer.fd_step)?.total;
    let gnorm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let g_floor = 1e-3 * gnorm.max((dg_dlambda(problem.spec(), e0.lambda, e0.f) * e0.lambda).abs());
    for (i, &cf) in grad.iter().enumerate() {
        let (a, b, w) = central_pair(&p, i, h);
        let ga = problem.evaluate(&a)?.g;
        let gb = problem.evaluate(&b)?.g;
        let fd = (gb - ga) / w;
        push(i, "dg", cf.abs(), fd.abs(), rel(cf, fd, g_floor), t_g);
    }

    // first-order behaviour of the control-point difference
    let mut richardson = Vec::new();
    if !affine {
        let delta = velocity_step_or_default(cfg);
        if let (Some(full), Some(half)) = (discrete, cfg.discrete_with_step(0.5 * delta)?) {
            let d_full = full.eigenvalue_gradient(&state, k)?;
            let d_half = half.eigenvalue_gradient(&state, k)?;
            for i in 0..p.len() {
                let error = (d_full[i] - fd_lambda[i]).abs();
                let half_delta_error = (d_half[i] - fd_lambda[i]).abs();
                richardson.push(RichardsonEntry {
                    parameter: i,
                    delta,
                    error,
                    half_delta_error,
                    ratio: error / half_delta_error,
                });
            }
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(DerivativeReport {
        p,
        mode: k + 1,
        fd_step: h,
        affine,
        checks,
        richardson,
        pass,
    })
}

/// `∂g/∂λ` of the frequency term; scales the `dg` comparison when the
/// gradient itself vanishes.
fn dg_dlambda(spec: &ObjectiveSpec, lambda: f64, f: f64) -> f64 {
    let df_dlambda = f / (2.0 * lambda);
    match spec {
        ObjectiveSpec::SquaredErrorLambda { lambda_ref, f_ref } => {
            lambda - lambda_ref.unwrap_or_else(|| crate::eigen::freq_to_lambda_vacuum(f_ref.unwrap_or(0.0)))
        }
        ObjectiveSpec::SquaredErrorFPenalty { f_ref, .. } => -2.0 * (f_ref - f) * df_dlambda,
        ObjectiveSpec::FlatnessCombined { f_ref, alpha, .. } => -2.0 * alpha * (f_ref - f) * df_dlambda,
    }
}

fn velocity_step_or_default(cfg: &ScenarioConfig) -> f64 {
    match &cfg.model {
        ModelConfig::Discrete {
            velocity_step: Some(s), ..
        } => *s,
        _ => 1e-3,
    }
}

// ---------------------------------------------------------------- field

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldReport {
    pub p: Vec<f64>,
    /// 1-based.
    pub k: usize,
    pub f: f64,
    pub samples: Vec<AxisSample>,
    pub cells: Vec<[f64; 2]>,
    /// Cell window of each sample, if any.
    pub cell_of_sample: Vec<Option<usize>>,
    pub flatness: Option<FlatnessReport>,
}

/// Axis field of the wanted mode at `p`. With tracking the mode is followed
/// from the start point to `p` in one step.
pub fn field(cfg: &ScenarioConfig, p: &[f64], n_samples: Option<usize>) -> Result<FieldReport> {
    let model = cfg.build_model()?;
    model.check_box(p)?;
    let cells = model.cells();
    let n = match (n_samples, &cfg.objective) {
        (Some(n), _) => n,
        (None, ObjectiveSpec::FlatnessCombined { samples_per_cell, .. }) => samples_per_cell * cells.len().max(1),
        (None, _) => 64 * cells.len().max(4),
    };
    if n == 0 {
        return Err(Error::config("/samples", "at least one sample"));
    }
    let state = model.solve(p)?;
    let k = if cfg.tracking && p != cfg.start.p.as_slice() {
        let seed = model.solve(&cfg.start.p)?;
        let tracker = TrackerState::new(&seed.solution, &seed.mass, cfg.start_index())?;
        tracker.select(&state.solution, &state.mass)?.index
    } else {
        cfg.start_index()
    };
    if k >= state.solution.len() {
        return Err(Error::config("/start/mode", format!("mode {} not among the reported modes", k + 1)));
    }
    let samples = model.axis_field(&state, k, n)?;
    let cell_of_sample = samples
        .iter()
        .map(|s| {
            cells.iter().enumerate().position(|(c, w)| {
                let last = c + 1 == cells.len();
                s.xi >= w[0] && (s.xi < w[1] || (last && s.xi <= w[1]))
            })
        })
        .collect();
    let flatness = if cells.is_empty() { None } else { Some(flatness(&samples, &cells)?) };
    Ok(FieldReport {
        p: p.to_vec(),
        k: k + 1,
        f: lambda_to_freq_vacuum(state.solution.eigenvalues[k].max(0.0))?,
        samples,
        cells,
        cell_of_sample,
        flatness,
    })
}
