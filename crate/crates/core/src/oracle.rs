//! Closed-form reference spectra: Bessel roots, pillbox cylinder modes and
//! rectangular box modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eigen::speed_of_light;
use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Largest argument for which the power series is used.
pub const SERIES_LIMIT: f64 = 12.0;

/// `J_m(x)` by its power series, `|x| ≤ 12`.
pub fn bessel_j(m: u32, x: f64) -> Result<f64> {
    if x.abs() > SERIES_LIMIT {
        return Err(Error::Unsupported(format!("Bessel series used outside |x| ≤ {SERIES_LIMIT}")));
    }
    let half = 0.5 * x;
    // (x/2)^m / m!
    let mut term = (1..=m).fold(1.0, |t, k| t * half / k as f64);
    let mut sum = term;
    let q = -half * half;
    for k in 1..200u32 {
        term *= q / (k as f64 * (k + m) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    Ok(sum)
}

/// `J′_m(x)` from `J′₀ = −J₁` and `J′_m = (J_{m−1} − J_{m+1})/2`.
pub fn bessel_j_prime(m: u32, x: f64) -> Result<f64> {
    if m == 0 {
        return Ok(-bessel_j(1, x)?);
    }
    Ok(0.5 * (bessel_j(m - 1, x)? - bessel_j(m + 1, x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BesselKind {
    J,
    JPrime,
}

fn eval(kind: BesselKind, m: u32, x: f64) -> Result<f64> {
    match kind {
        BesselKind::J => bessel_j(m, x),
        BesselKind::JPrime => bessel_j_prime(m, x),
    }
}

const SCAN_START: f64 = 1e-2;
const SCAN_STEP: f64 = 0.05;

/// Sign-change brackets of the chosen function on `(0, upper]`, zero at the origin excluded.
pub fn root_brackets(kind: BesselKind, m: u32, upper: f64) -> Result<Vec<(f64, f64)>> {
    let upper = upper.min(SERIES_LIMIT);
    let mut out = Vec::new();
    let mut a = SCAN_START;
    let mut fa = eval(kind, m, a)?;
    while a < upper {
        let b = (a + SCAN_STEP).min(upper);
        let fb = eval(kind, m, b)?;
        if fa == 0.0 || fa.signum() != fb.signum() {
            out.push((a, b));
        }
        a = b;
        fa = fb;
    }
    Ok(out)
}

/// n-th positive root (1-based) of `J_m` or `J′_m`, to full double precision by bisection.
pub fn bessel_zero(kind: BesselKind, m: u32, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("Bessel root indices start at 1"));
    }
    let brackets = root_brackets(kind, m, SERIES_LIMIT)?;
    let &(mut a, mut b) = brackets
        .get(n as usize - 1)
        .ok_or_else(|| Error::Unsupported(format!("root {n} of order {m} lies beyond x = {SERIES_LIMIT}")))?;
    let mut fa = eval(kind, m, a)?;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = eval(kind, m, mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    TM,
    TE,
}

/// Cylinder mode label `TMmnp` / `TEmnp` (single-digit indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CylinderMode {
    pub pol: Polarization,
    pub m: u32,
    pub n: u32,
    pub p: u32,
}

impl FromStr for CylinderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config {
            pointer: String::new(),
            message: format!("invalid cylinder mode label {s:?}"),
        };
        let (pol, rest) = if let Some(r) = s.strip_prefix("TM") {
            (Polarization::TM, r)
        } else if let Some(r) = s.strip_prefix("TE") {
            (Polarization::TE, r)
        } else {
            return Err(bad());
        };
        let digits: Vec<u32> = rest.chars().map(|c| c.to_digit(10)).collect::<Option<_>>().ok_or_else(bad)?;
        let [m, n, p] = digits[..] else { return Err(bad()) };
        if n == 0 || (pol == Polarization::TE && p == 0) {
            return Err(bad());
        }
        Ok(Self { pol, m, n, p })
    }
}

impl TryFrom<String> for CylinderMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CylinderMode> for String {
    fn from(m: CylinderMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for CylinderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pol = match self.pol {
            Polarization::TM => "TM",
            Polarization::TE => "TE",
        };
        write!(f, "{pol}{}{}{}", self.m, self.n, self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PillboxSpec {
    pub radius: f64,
    pub length: f64,
}

impl PillboxSpec {
    pub fn new(radius: f64, length: f64) -> Result<Self> {
        if !(radius > 0.0 && length > 0.0) {
            return Err(Error::domain("pillbox radius and length must be positive"));
        }
        Ok(Self { radius, length })
    }
}

impl CylinderMode {
    pub fn root(&self) -> Result<f64> {
        let kind = match self.pol {
            Polarization::TM => BesselKind::J,
            Polarization::TE => BesselKind::JPrime,
        };
        bessel_zero(kind, self.m, self.n)
    }

    /// `λ = (j/r)² + (pπ/L)²`.
    pub fn lambda(&self, spec: &PillboxSpec) -> Result<f64> {
        Ok(self.lambda_with_root(self.root()?, spec))
    }

    pub fn lambda_with_root(&self, root: f64, spec: &PillboxSpec) -> f64 {
        (root / spec.radius).powi(2) + (self.p as f64 * PI / spec.length).powi(2)
    }
}

pub fn lambda_to_freq_c(lambda: f64) -> f64 {
    speed_of_light() * lambda.sqrt() / (2.0 * PI)
}

pub fn pillbox_freqs(spec: &PillboxSpec, modes: &[CylinderMode]) -> Result<Vec<f64>> {
    modes.iter().map(|m| Ok(lambda_to_freq_c(m.lambda(spec)?))).collect()
}

/// Radius at which TM010 and TE111 are degenerate: `L·√(j₀₁² − j′₁₁²)/π`.
pub fn crossing_radius(length: f64) -> Result<f64> {
    let j01 = bessel_zero(BesselKind::J, 0, 1)?;
    let jp11 = bessel_zero(BesselKind::JPrime, 1, 1)?;
    Ok(length * (j01 * j01 - jp11 * jp11).sqrt() / PI)
}

/// Rectangular mode `(m, n, p)`: `m, n` index the cross-section, `p` the axial direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxMode {
    pub m: u32,
    pub n: u32,
    pub p: u32,
}

/// `λ = π²(m²/a² + n²/b²) + (pπ/L)²`.
pub fn box_lambda(a: f64, b: f64, length: f64, mode: BoxMode) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && length > 0.0) {
        return Err(Error::domain("box dimensions must be positive"));
    }
    if mode.m == 0 || mode.n == 0 {
        return Err(Error::domain(format!("box mode {mode:?}: cross-section indices start at 1")));
    }
    let (m, n, p) = (mode.m as f64, mode.n as f64, mode.p as f64);
    Ok(PI * PI * (m * m / (a * a) + n * n / (b * b)) + (p * PI / length).powi(2))
}

pub fn box_freqs(a: f64, b: f64, length: f64, mode: BoxMode) -> Result<f64> {
    Ok(lambda_to_freq_c(box_lambda(a, b, length, mode)?))
}
