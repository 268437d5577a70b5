//! Finsler structures, the fundamental tensor, the Cartan tensor and the
//! sampled validity checks of a structure.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use serde::Serialize;

use crate::chart::{structure_jet, BaseMode};
use crate::error::{FinslerError, Result};
use crate::jet::Jet;
use crate::numerics::{halton, small_inverse, sym_eig_extremes};
use crate::scalar::Scalar;

/// Coordinate domain a structure is defined on.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Chart {
    /// Periodic box `[0, L_1) × … × [0, L_n)`.
    Torus { lengths: Vec<f64> },
    /// Open disk `|x| < radius`.
    Disk { radius: f64 },
    /// Stereographic chart of a round sphere, restricted to `|x| < extent`.
    SpherePatch { extent: f64 },
}

impl Chart {
    pub fn is_periodic(&self) -> bool {
        matches!(self, Chart::Torus { .. })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        match self {
            Chart::Torus { .. } => x.iter().all(|v| v.is_finite()),
            Chart::Disk { radius } => r < *radius,
            Chart::SpherePatch { extent } => r < *extent,
        }
    }

    /// Map a point of the unit cube to the chart. Disk-like charts are
    /// sampled inside 90% of their radius.
    pub fn sample(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Chart::Torus { lengths } => u.iter().zip(lengths).map(|(a, l)| a * l).collect(),
            Chart::Disk { radius: r } | Chart::SpherePatch { extent: r } => {
                let rho = 0.9 * r * u[0].sqrt();
                let phi = 2.0 * PI * u[1];
                let mut x = vec![rho * phi.cos(), rho * phi.sin()];
                if u.len() > 2 {
                    // shrink into the ball for n = 3
                    let z = (2.0 * u[2] - 1.0) * 0.9 * r;
                    let s = (1.0 - (z / r).powi(2)).max(0.0).sqrt();
                    x = vec![x[0] * s, x[1] * s, z];
                }
                x
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Chart::Torus { .. } => "torus",
            Chart::Disk { .. } => "disk",
            Chart::SpherePatch { .. } => "sphere-patch",
        }
    }
}

/// How `F` is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// A closed-form expression in `(x, y)`.
    Analytic,
    /// Reconstructed from samples on a base × fiber grid.
    Grid,
}

/// A Finsler structure `F(x, y)` on a chart.
///
/// `eval_jet` receives jets for the chart coordinates and the fiber
/// coordinates; it must compute `F` with the same expression as `eval`.
pub trait FinslerStructure: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn chart(&self) -> Chart;
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
    fn eval_jet(&self, x: &[Jet], y: &[Jet]) -> Jet;

    fn name(&self) -> String {
        "structure".to_string()
    }

    fn mode(&self) -> Mode {
        Mode::Analytic
    }

    /// Whether `eval_jet` may be differentiated in `x`.
    fn analytic_base_partials(&self) -> bool {
        self.mode() == Mode::Analytic
    }
}

/// Closed-form structures implement this once, generically over the scalar
/// type, and get [`FinslerStructure`] for free.
pub trait ClosedForm: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn chart(&self) -> Chart;
    fn f<S: Scalar>(&self, x: &[S], y: &[S]) -> S;

    fn name(&self) -> String {
        "structure".to_string()
    }
}

impl<T: ClosedForm> FinslerStructure for T {
    fn dim(&self) -> usize {
        ClosedForm::dim(self)
    }
    fn chart(&self) -> Chart {
        ClosedForm::chart(self)
    }
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.f(x, y)
    }
    fn eval_jet(&self, x: &[Jet], y: &[Jet]) -> Jet {
        self.f(x, y)
    }
    fn name(&self) -> String {
        ClosedForm::name(self)
    }
}

/// `c · F` for a constant `c > 0`.
#[derive(Debug, Clone)]
pub struct Scaled {
    pub inner: Arc<dyn FinslerStructure>,
    pub factor: f64,
}

impl FinslerStructure for Scaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn chart(&self) -> Chart {
        self.inner.chart()
    }
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.factor * self.inner.eval(x, y)
    }
    fn eval_jet(&self, x: &[Jet], y: &[Jet]) -> Jet {
        self.inner.eval_jet(x, y) * self.factor
    }
    fn name(&self) -> String {
        format!("{}x{}", self.factor, self.inner.name())
    }
    fn mode(&self) -> Mode {
        self.inner.mode()
    }
    fn analytic_base_partials(&self) -> bool {
        self.inner.analytic_base_partials()
    }
}

/// Symmetric 2-tensor stored as its upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymTensor2 {
    n: usize,
    packed: Vec<f64>,
}

fn idx2(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + b
}

impl SymTensor2 {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                packed.push(f(i, j));
            }
        }
        SymTensor2 { n, packed }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[idx2(self.n, i, j)]
    }

    /// Row-major full matrix.
    pub fn to_matrix(&self) -> Vec<f64> {
        let n = self.n;
        (0..n * n).map(|k| self.get(k / n, k % n)).collect()
    }

    pub fn inverse(&self) -> Option<Vec<f64>> {
        small_inverse(&self.to_matrix(), self.n)
    }

    /// `(min, max)` eigenvalue.
    pub fn eigen_extremes(&self) -> (f64, f64) {
        sym_eig_extremes(&self.to_matrix(), self.n)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen_extremes().0
    }

    /// Spectral condition number; infinite when not positive definite.
    pub fn condition_number(&self) -> f64 {
        let (lo, hi) = self.eigen_extremes();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// `v^i v^j T_ij`.
    pub fn quadratic(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += self.get(i, j) * v[i] * v[j];
            }
        }
        acc
    }
}

/// Totally symmetric 3-tensor stored once per sorted index triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymTensor3 {
    n: usize,
    packed: Vec<f64>,
}

fn triples(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |i| (i..n).flat_map(move |j| (j..n).map(move |k| (i, j, k))))
}

impl SymTensor3 {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let packed = triples(n).map(|(i, j, k)| f(i, j, k)).collect();
        SymTensor3 { n, packed }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let mut s = [i, j, k];
        s.sort_unstable();
        let pos = triples(self.n)
            .position(|t| t == (s[0], s[1], s[2]))
            .expect("index out of range");
        self.packed[pos]
    }

    pub fn max_abs(&self) -> f64 {
        self.packed.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn check_vector(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<()> {
    let n = fs.dim();
    if x.len() != n || y.len() != n {
        return Err(FinslerError::InvalidParameter(format!(
            "expected {n}-dimensional x and y, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if y.iter().all(|v| *v == 0.0) {
        return Err(FinslerError::ZeroVector);
    }
    Ok(())
}

/// `g_ij` as jets, from the jet of `F²`.
pub(crate) fn metric_jets(l: &Jet, n: usize) -> Vec<Vec<Jet>> {
    let ly: Vec<Jet> = (0..n).map(|i| l.d(n + i)).collect();
    let mut g: Vec<Vec<Jet>> = vec![Vec::with_capacity(n); n];
    for i in 0..n {
        for j in 0..n {
            if j < i {
                let v = g[j][i].clone();
                g[i].push(v);
            } else {
                g[i].push(ly[i].d(n + j) * 0.5);
            }
        }
    }
    g
}

/// Inverse of a symmetric 2x2 or 3x3 matrix of jets.
pub(crate) fn inverse_jets(g: &[Vec<Jet>]) -> Vec<Vec<Jet>> {
    let n = g.len();
    match n {
        2 => {
            let det = g[0][0].clone() * &g[1][1] - g[0][1].clone() * &g[1][0];
            let r = det.recip();
            vec![
                vec![g[1][1].clone() * &r, -(g[0][1].clone() * &r)],
                vec![-(g[1][0].clone() * &r), g[0][0].clone() * &r],
            ]
        }
        3 => {
            let c = |a: usize, b: usize, d: usize, e: usize| g[a][b].clone() * &g[d][e] - g[a][e].clone() * &g[d][b];
            let cof = [
                [c(1, 1, 2, 2), c(0, 2, 2, 1), c(0, 1, 1, 2)],
                [c(1, 2, 2, 0), c(0, 0, 2, 2), c(0, 2, 1, 0)],
                [c(1, 0, 2, 1), c(0, 1, 2, 0), c(0, 0, 1, 1)],
            ];
            let det = g[0][0].clone() * &cof[0][0] + g[0][1].clone() * &cof[1][0] + g[0][2].clone() * &cof[2][0];
            let r = det.recip();
            cof.iter()
                .map(|row| row.iter().map(|v| v.clone() * &r).collect())
                .collect()
        }
        1 => vec![vec![g[0][0].recip()]],
        _ => panic!("inverse_jets supports n ≤ 3"),
    }
}

pub(crate) fn metric_values(g: &[Vec<Jet>]) -> SymTensor2 {
    SymTensor2::from_fn(g.len(), |i, j| g[i][j].value())
}

pub(crate) fn ensure_positive(g: &SymTensor2, x: &[f64], y: &[f64]) -> Result<()> {
    let (lo, hi) = g.eigen_extremes();
    if !(lo > 1e-14 * hi.abs().max(1e-300)) || !lo.is_finite() {
        return Err(FinslerError::SingularMetric {
            min_eigenvalue: lo,
            x: x.to_vec(),
            y: y.to_vec(),
        });
    }
    Ok(())
}

/// `g_ij = ½ ∂²F²/∂y^i∂y^j`, checked to be positive definite.
pub fn fundamental_tensor(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<SymTensor2> {
    let g = raw_fundamental_tensor(fs, x, y)?;
    ensure_positive(&g, x, y)?;
    Ok(g)
}

/// `g_ij` without the positivity check.
pub fn raw_fundamental_tensor(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<SymTensor2> {
    check_vector(fs, x, y)?;
    let l = structure_jet(fs, x, y, 2, 0, BaseMode::Analytic, true)?;
    Ok(metric_values(&metric_jets(&l, fs.dim())))
}

fn fiber_third_derivatives(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<(SymTensor2, SymTensor3)> {
    check_vector(fs, x, y)?;
    let n = fs.dim();
    let l = structure_jet(fs, x, y, 3, 0, BaseMode::Analytic, true)?;
    let g = metric_jets(&l, n);
    let gv = metric_values(&g);
    ensure_positive(&gv, x, y)?;
    let c = SymTensor3::from_fn(n, |i, j, k| 0.5 * g[i][j].d(n + k).value());
    Ok((gv, c))
}

/// `C_ijk = ½ ∂g_ij/∂y^k`.
pub fn cartan_tensor(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<SymTensor3> {
    fiber_third_derivatives(fs, x, y).map(|(_, c)| c)
}

/// `C_k = g^{ij} C_ijk`.
pub fn mean_cartan(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let (g, c) = fiber_third_derivatives(fs, x, y)?;
    let n = g.dim();
    let gi = g.inverse().ok_or(FinslerError::SingularMetric {
        min_eigenvalue: g.min_eigenvalue(),
        x: x.to_vec(),
        y: y.to_vec(),
    })?;
    Ok((0..n)
        .map(|k| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += gi[i * n + j] * c.get(i, j, k);
                }
            }
            acc
        })
        .collect())
}

/// Unit direction number `index` of a quasi-random sequence on the fiber
/// sphere, together with the base point.
pub fn sample_point(chart: &Chart, n: usize, index: usize) -> (Vec<f64>, Vec<f64>) {
    let u = halton(index + 1, n + n - 1);
    let x = chart.sample(&u[..n]);
    let y = match n {
        2 => {
            let t = 2.0 * PI * u[2];
            vec![t.cos(), t.sin()]
        }
        3 => {
            let z = 2.0 * u[3] - 1.0;
            let phi = 2.0 * PI * u[4];
            let s = (1.0 - z * z).sqrt();
            vec![s * phi.cos(), s * phi.sin(), z]
        }
        _ => vec![1.0; n],
    };
    (x, y)
}

#[derive(Debug, Clone, Copy)]
pub struct ValidityTolerances {
    pub homogeneity: f64,
    pub positivity: f64,
}

impl Default for ValidityTolerances {
    fn default() -> Self {
        ValidityTolerances {
            homogeneity: 1e-8,
            positivity: 1e-6,
        }
    }
}

/// Outcome of one sampled check; `worst` is the largest residual (or, for
/// positivity, the smallest eigenvalue) seen.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub passed: bool,
    pub worst: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidityReport {
    pub samples: usize,
    pub homogeneity: Check,
    pub metric_homogeneity: Check,
    pub positivity: Check,
    pub integrability: Check,
}

impl ValidityReport {
    pub fn all_passed(&self) -> bool {
        self.homogeneity.passed && self.metric_homogeneity.passed && self.positivity.passed && self.integrability.passed
    }
}

/// Sampled checks that `F` is a Finsler structure: positive 1-homogeneity,
/// 0-homogeneity of `g`, positive definiteness and total symmetry of `∂_k g_ij`.
pub fn validate_structure(fs: &dyn FinslerStructure, samples: usize, tol: &ValidityTolerances) -> Result<ValidityReport> {
    if samples < 10 {
        return Err(FinslerError::InvalidParameter(format!(
            "validation needs at least 10 samples, got {samples}"
        )));
    }
    let n = fs.dim();
    let chart = fs.chart();
    let mut homog = 0.0f64;
    let mut ghomog = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let mut integ = 0.0f64;
    for s in 0..samples {
        let (x, y) = sample_point(&chart, n, s);
        let f = fs.eval(&x, &y);
        if !(f > 0.0) {
            min_eig = min_eig.min(f.min(0.0));
            continue;
        }
        for lambda in [0.5, 2.0, 10.0] {
            let ly: Vec<f64> = y.iter().map(|v| v * lambda).collect();
            homog = homog.max((fs.eval(&x, &ly) - lambda * f).abs() / (lambda * f));
        }
        let fj = structure_jet(fs, &x, &y, 3, 0, BaseMode::Analytic, false)?;
        let euler: f64 = (0..n).map(|i| y[i] * fj.d(n + i).value()).sum();
        homog = homog.max((euler - f).abs() / f);

        let l = structure_jet(fs, &x, &y, 3, 0, BaseMode::Analytic, true)?;
        let g = metric_jets(&l, n);
        let gv = metric_values(&g);
        let scale = gv.eigen_extremes().1.abs().max(1e-300);
        for lambda in [0.5, 2.0, 10.0] {
            let ly: Vec<f64> = y.iter().map(|v| v * lambda).collect();
            let gl = raw_fundamental_tensor(fs, &x, &ly)?;
            for i in 0..n {
                for j in 0..n {
                    ghomog = ghomog.max((gl.get(i, j) - gv.get(i, j)).abs() / scale);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let euler: f64 = (0..n).map(|k| y[k] * g[i][j].d(n + k).value()).sum();
                ghomog = ghomog.max(euler.abs() / scale);
                for k in 0..n {
                    let a = g[i][j].d(n + k).value();
                    let b = g[k][j].d(n + i).value();
                    integ = integ.max((a - b).abs() / scale);
                }
            }
        }
        min_eig = min_eig.min(gv.min_eigenvalue());
    }
    Ok(ValidityReport {
        samples,
        homogeneity: Check {
            passed: homog <= tol.homogeneity,
            worst: homog,
        },
        metric_homogeneity: Check {
            passed: ghomog <= tol.homogeneity,
            worst: ghomog,
        },
        positivity: Check {
            passed: min_eig > tol.positivity,
            worst: min_eig,
        },
        integrability: Check {
            passed: integ <= tol.homogeneity,
            worst: integ,
        },
    })
}
