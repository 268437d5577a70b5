//! Named analytic Finsler structures with closed-form reference data.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::chart::FiberGrid;
use crate::connections::{berwald_coeffs, spray};
use crate::curvature::{gem_residual, hat_scalars, hh_curvature, ricci_directional};
use crate::error::{FinslerError, Result};
use crate::measure::fiber_measure;
use crate::scalar::{dot, Scalar};
use crate::structure::{cartan_tensor, fundamental_tensor, sample_point, validate_structure, Chart, ClosedForm, FinslerStructure, ValidityTolerances};

/// Numeric parameters keyed by name.
pub type Params = BTreeMap<String, f64>;

pub const NAMES: [&str; 7] = [
    "euclidean",
    "aniso-quadratic",
    "quartic-minkowski",
    "conformal-torus",
    "sphere-patch",
    "randers-torus",
    "funk-disk",
];

fn torus(n: usize) -> Chart {
    Chart::Torus {
        lengths: vec![2.0 * PI; n],
    }
}

#[derive(Debug, Clone)]
pub struct Euclidean {
    pub n: usize,
}

impl ClosedForm for Euclidean {
    fn dim(&self) -> usize {
        self.n
    }
    fn chart(&self) -> Chart {
        torus(self.n)
    }
    fn f<S: Scalar>(&self, _x: &[S], y: &[S]) -> S {
        dot(y, y).sqrt()
    }
    fn name(&self) -> String {
        "euclidean".into()
    }
}

/// `F = √(2y₁² + 3y₂²)`.
#[derive(Debug, Clone)]
pub struct AnisoQuadratic;

impl ClosedForm for AnisoQuadratic {
    fn dim(&self) -> usize {
        2
    }
    fn chart(&self) -> Chart {
        torus(2)
    }
    fn f<S: Scalar>(&self, _x: &[S], y: &[S]) -> S {
        (y[0].square() * 2.0 + y[1].square() * 3.0).sqrt()
    }
    fn name(&self) -> String {
        "aniso-quadratic".into()
    }
}

/// `F = (y₁⁴ + y₂⁴)^{1/4}`.
#[derive(Debug, Clone)]
pub struct QuarticMinkowski;

impl ClosedForm for QuarticMinkowski {
    fn dim(&self) -> usize {
        2
    }
    fn chart(&self) -> Chart {
        torus(2)
    }
    fn f<S: Scalar>(&self, _x: &[S], y: &[S]) -> S {
        (y[0].square().square() + y[1].square().square()).powf(0.25)
    }
    fn name(&self) -> String {
        "quartic-minkowski".into()
    }
}

/// `F = e^{u(x)}|y|` with `u = amp · sin x₁ cos x₂`.
#[derive(Debug, Clone)]
pub struct ConformalTorus {
    pub amp: f64,
}

impl ConformalTorus {
    pub fn u(&self, x: &[f64]) -> f64 {
        self.amp * x[0].sin() * x[1].cos()
    }

    /// Gauss curvature `−e^{−2u} Δu`.
    pub fn gauss_curvature(&self, x: &[f64]) -> f64 {
        let u = self.u(x);
        let lap = -2.0 * u;
        -(-2.0 * u).exp() * lap
    }
}

impl ClosedForm for ConformalTorus {
    fn dim(&self) -> usize {
        2
    }
    fn chart(&self) -> Chart {
        torus(2)
    }
    fn f<S: Scalar>(&self, x: &[S], y: &[S]) -> S {
        let u = x[0].sin() * x[1].cos() * self.amp;
        dot(y, y).sqrt() * u.exp()
    }
    fn name(&self) -> String {
        "conformal-torus".into()
    }
}

/// Round sphere of radius `r` in stereographic coordinates,
/// `F = 2r|y| / (1 + |x|²)`.
#[derive(Debug, Clone)]
pub struct SpherePatch {
    pub r: f64,
}

impl ClosedForm for SpherePatch {
    fn dim(&self) -> usize {
        2
    }
    fn chart(&self) -> Chart {
        Chart::SpherePatch { extent: 2.0 }
    }
    fn f<S: Scalar>(&self, x: &[S], y: &[S]) -> S {
        dot(y, y).sqrt() * (2.0 * self.r) / (dot(x, x) + 1.0)
    }
    fn name(&self) -> String {
        "sphere-patch".into()
    }
}

/// `F = |y| + b(x)·y` with `b(x) = (b + wave · sin x₂, wave · cos x₁)`.
#[derive(Debug, Clone)]
pub struct RandersTorus {
    pub b: f64,
    pub wave: f64,
}

impl RandersTorus {
    pub fn new(b: f64, wave: f64) -> Result<Self> {
        // sup_x |b(x)|² ≤ (|b| + wave)² + wave²
        let bound = (b.abs() + wave.abs()).powi(2) + wave * wave;
        if !(bound < 1.0) {
            return Err(FinslerError::InvalidParameter(format!(
                "Randers drift must satisfy sup |b(x)| < 1 for strong convexity (b = {b}, wave = {wave})"
            )));
        }
        Ok(RandersTorus { b, wave })
    }

    pub fn drift<S: Scalar>(&self, x: &[S]) -> [S; 2] {
        [x[1].sin() * self.wave + self.b, x[0].cos() * self.wave]
    }
}

impl ClosedForm for RandersTorus {
    fn dim(&self) -> usize {
        2
    }
    fn chart(&self) -> Chart {
        torus(2)
    }
    fn f<S: Scalar>(&self, x: &[S], y: &[S]) -> S {
        let [b0, b1] = self.drift(x);
        dot(y, y).sqrt() + b0 * &y[0] + b1 * &y[1]
    }
    fn name(&self) -> String {
        "randers-torus".into()
    }
}

/// Funk metric of the unit disk,
/// `F = (√((1 − |x|²)|y|² + ⟨x, y⟩²) + ⟨x, y⟩) / (1 − |x|²)`.
#[derive(Debug, Clone)]
pub struct FunkDisk;

impl ClosedForm for FunkDisk {
    fn dim(&self) -> usize {
        2
    }
    fn chart(&self) -> Chart {
        Chart::Disk { radius: 1.0 }
    }
    fn f<S: Scalar>(&self, x: &[S], y: &[S]) -> S {
        let xy = dot(x, y);
        let w = -dot(x, x) + 1.0;
        ((w.clone() * dot(y, y) + xy.square()).sqrt() + xy) / w
    }
    fn name(&self) -> String {
        "funk-disk".into()
    }
}

type ScalarRef = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type MatrixRef = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type SprayRef = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Flags {
    pub riemannian: bool,
    pub locally_minkowski: bool,
    pub gem: bool,
}

/// Closed-form reference data an entry may supply.
#[derive(Clone, Default)]
pub struct References {
    /// Expected `H(u, u)` as a function of `x` (direction independent).
    pub ricci_directional: Option<ScalarRef>,
    /// `a_ij(x)`, row-major, for Riemannian entries.
    pub riemannian_metric: Option<MatrixRef>,
    /// Expected spray `G^i(x, y)`.
    pub spray: Option<SprayRef>,
    /// Expected max-abs Cartan tensor component.
    pub cartan_norm: Option<f64>,
}

#[derive(Clone)]
pub struct ZooEntry {
    pub name: String,
    pub params: Params,
    pub flags: Flags,
    pub references: References,
    structure: Arc<dyn FinslerStructure>,
}

impl fmt::Debug for ZooEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ZooEntry")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("flags", &self.flags)
            .finish()
    }
}

impl ZooEntry {
    pub fn structure(&self) -> &dyn FinslerStructure {
        self.structure.as_ref()
    }

    pub fn shared(&self) -> Arc<dyn FinslerStructure> {
        self.structure.clone()
    }

    pub fn dim(&self) -> usize {
        self.structure.dim()
    }

    pub fn chart(&self) -> Chart {
        self.structure.chart()
    }

    /// One line for listings: name, dimension, chart, flags.
    pub fn summary(&self) -> String {
        let mut flags = Vec::new();
        if self.flags.riemannian {
            flags.push("riemannian");
        }
        if self.flags.locally_minkowski {
            flags.push("locally-minkowski");
        }
        if self.flags.gem {
            flags.push("gem");
        }
        let flags = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
        format!("{}\t{}\t{}\t{}", self.name, self.dim(), self.chart().name(), flags)
    }
}

fn param(params: &Params, key: &str, default: f64, allowed: &[&str]) -> Result<f64> {
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(FinslerError::InvalidParameter(format!(
            "unknown parameter '{k}' (accepted: {})",
            if allowed.is_empty() { "none".to_string() } else { allowed.join(", ") }
        )));
    }
    let v = params.get(key).copied().unwrap_or(default);
    if !v.is_finite() {
        return Err(FinslerError::InvalidParameter(format!("{key} must be finite")));
    }
    Ok(v)
}

fn constant(v: f64) -> ScalarRef {
    Arc::new(move |_| v)
}

/// Look up and configure a zoo entry. Parameters: `dim` for `euclidean`
/// (2 or 3), `amp` for `conformal-torus` (default 0.2), `r` for
/// `sphere-patch` (default 1), `b` and `wave` for `randers-torus`
/// (defaults 0.3 and 0).
pub fn get_entry(name: &str, params: &Params) -> Result<ZooEntry> {
    let mut flags = Flags::default();
    let mut refs = References::default();
    let structure: Arc<dyn FinslerStructure> = match name {
        "euclidean" => {
            let n = param(params, "dim", 2.0, &["dim"])?;
            if n != 2.0 && n != 3.0 {
                return Err(FinslerError::InvalidParameter(format!("euclidean dim must be 2 or 3, got {n}")));
            }
            let n = n as usize;
            flags = Flags {
                riemannian: true,
                locally_minkowski: true,
                gem: true,
            };
            refs.ricci_directional = Some(constant(0.0));
            refs.riemannian_metric = Some(Arc::new(move |_| {
                (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect()
            }));
            refs.spray = Some(Arc::new(move |_, _| vec![0.0; n]));
            refs.cartan_norm = Some(0.0);
            Arc::new(Euclidean { n })
        }
        "aniso-quadratic" => {
            param(params, "", 0.0, &[])?;
            flags = Flags {
                riemannian: true,
                locally_minkowski: true,
                gem: true,
            };
            refs.ricci_directional = Some(constant(0.0));
            refs.riemannian_metric = Some(Arc::new(|_| vec![2.0, 0.0, 0.0, 3.0]));
            refs.spray = Some(Arc::new(|_, _| vec![0.0; 2]));
            refs.cartan_norm = Some(0.0);
            Arc::new(AnisoQuadratic)
        }
        "quartic-minkowski" => {
            param(params, "", 0.0, &[])?;
            flags.locally_minkowski = true;
            flags.gem = true;
            refs.ricci_directional = Some(constant(0.0));
            refs.spray = Some(Arc::new(|_, _| vec![0.0; 2]));
            Arc::new(QuarticMinkowski)
        }
        "conformal-torus" => {
            let amp = param(params, "amp", 0.2, &["amp"])?;
            let ct = ConformalTorus { amp };
            flags.riemannian = true;
            let k = ct.clone();
            refs.ricci_directional = Some(Arc::new(move |x| k.gauss_curvature(x)));
            let k = ct.clone();
            refs.riemannian_metric = Some(Arc::new(move |x| {
                let e = (2.0 * k.u(x)).exp();
                vec![e, 0.0, 0.0, e]
            }));
            refs.cartan_norm = Some(0.0);
            Arc::new(ct)
        }
        "sphere-patch" => {
            let r = param(params, "r", 1.0, &["r"])?;
            if !(r > 0.0) {
                return Err(FinslerError::InvalidParameter(format!("sphere radius must be positive, got {r}")));
            }
            flags.riemannian = true;
            flags.gem = true;
            refs.ricci_directional = Some(constant(1.0 / (r * r)));
            refs.riemannian_metric = Some(Arc::new(move |x: &[f64]| {
                let s = (2.0 * r / (1.0 + x[0] * x[0] + x[1] * x[1])).powi(2);
                vec![s, 0.0, 0.0, s]
            }));
            refs.cartan_norm = Some(0.0);
            Arc::new(SpherePatch { r })
        }
        "randers-torus" => {
            let b = param(params, "b", 0.3, &["b", "wave"])?;
            let wave = param(params, "wave", 0.0, &["b", "wave"])?;
            let rt = RandersTorus::new(b, wave)?;
            if wave == 0.0 {
                flags.locally_minkowski = true;
                flags.gem = true;
                refs.ricci_directional = Some(constant(0.0));
                refs.spray = Some(Arc::new(|_, _| vec![0.0; 2]));
            }
            Arc::new(rt)
        }
        "funk-disk" => {
            param(params, "", 0.0, &[])?;
            flags.gem = true;
            refs.ricci_directional = Some(constant(-0.25));
            refs.spray = Some(Arc::new(|x: &[f64], y: &[f64]| {
                let f = FunkDisk.f(x, y);
                y.iter().map(|v| 0.5 * f * v).collect()
            }));
            Arc::new(FunkDisk)
        }
        other => return Err(FinslerError::UnknownMetric(other.to_string())),
    };
    let entry = ZooEntry {
        name: name.to_string(),
        params: params.clone(),
        flags,
        references: refs,
        structure,
    };
    if !self_validate(&entry)? {
        return Err(FinslerError::InvalidParameter(format!(
            "{name} with {params:?} fails validation on its chart"
        )));
    }
    Ok(entry)
}

/// All entries with default parameters.
pub fn list() -> Vec<ZooEntry> {
    NAMES
        .iter()
        .map(|n| get_entry(n, &Params::new()).expect("default parameters are valid"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceRow {
    pub quantity: String,
    pub worst: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceReport {
    pub entry: String,
    pub samples: usize,
    pub rows: Vec<ReferenceRow>,
}

impl ReferenceReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn worst(&self, quantity: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.quantity == quantity).map(|r| r.worst)
    }
}

/// Compare pipeline outputs against every reference the entry supplies,
/// at `samples` quasi-random points; residuals are absolute, scaled by
/// `1 + |reference|`.
pub fn reference_check(entry: &ZooEntry, samples: usize, tol: f64) -> Result<ReferenceReport> {
    let fs = entry.structure();
    let n = fs.dim();
    let chart = fs.chart();
    let mut rows: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |k: &'static str, v: f64| {
        let e = rows.entry(k).or_insert(0.0);
        *e = e.max(if v.is_nan() { f64::INFINITY } else { v });
    };
    let fiber = FiberGrid::new(16)?;
    for s in 0..samples {
        let (x, y) = sample_point(&chart, n, s);
        let g = fundamental_tensor(fs, &x, &y)?;
        if let Some(a) = &entry.references.riemannian_metric {
            let a = a(&x);
            let r = (0..n * n).map(|k| (g.get(k / n, k % n) - a[k]).abs() / (1.0 + a[k].abs())).fold(0.0, f64::max);
            bump("g", r);
            if n == 2 {
                let det = a[0] * a[3] - a[1] * a[2];
                let total = fiber_measure(fs, &x, 256)?;
                let want = 2.0 * PI * det.sqrt();
                bump("indicatrix_volume", (total - want).abs() / want);
            }
        }
        if let Some(c) = entry.references.cartan_norm {
            bump("cartan", (cartan_tensor(fs, &x, &y)?.max_abs() - c).abs());
        }
        if let Some(sp) = &entry.references.spray {
            let want = sp(&x, &y);
            let got = spray(fs, &x, &y)?;
            let r = got.iter().zip(&want).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())).fold(0.0, f64::max);
            bump("spray", r);
        }
        if entry.flags.locally_minkowski {
            let b = berwald_coeffs(fs, &x, &y)?;
            bump("berwald", b.berwald.iter().fold(0.0, |m, v| m.max(v.abs())));
            bump("hh", hh_curvature(fs, &x, &y)?.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        if let Some(h) = &entry.references.ricci_directional {
            let want = h(&x);
            let got = ricci_directional(fs, &x, &y)?;
            bump("ricci_directional", (got - want).abs() / (1.0 + want.abs()));
            if entry.flags.gem {
                let (ht, _) = hat_scalars(fs, &x, &y, &|_| 0.0)?;
                bump("h_tilde", (ht - n as f64 * want).abs() / (1.0 + want.abs()));
            }
        }
        if entry.flags.gem && s < samples.min(4) {
            bump("gem_residual", gem_residual(fs, &x, &fiber)?);
        }
    }
    let report = ReferenceReport {
        entry: entry.name.clone(),
        samples,
        rows: rows
            .into_iter()
            .map(|(k, v)| ReferenceRow {
                quantity: k.to_string(),
                worst: v,
                passed: v <= tol,
            })
            .collect(),
    };
    Ok(report)
}

/// Validate an entry on its declared domain.
pub fn self_validate(entry: &ZooEntry) -> Result<bool> {
    let r = validate_structure(entry.structure(), 32, &ValidityTolerances::default())?;
    Ok(r.all_passed())
}
