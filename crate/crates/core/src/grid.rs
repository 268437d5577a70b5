//! Curvature of surfaces sampled on a base × fiber grid.
//!
//! A `p`-homogeneous function `f(x, y) = |y|^p φ(x, θ(y))` is represented by
//! its profile `φ` on the unit circle, stored as an array of shape
//! `(N₁, N₂, N_θ)`. Fiber derivatives act on profiles exactly through
//!
//! ```text
//! ∂f/∂y¹ ↦ p cos θ φ − sin θ ∂θφ,    ∂f/∂y² ↦ p sin θ φ + cos θ ∂θφ
//! ```
//!
//! with `∂θ` taken spectrally (exact for the trigonometric interpolant),
//! while base derivatives use the periodic grid engine. This gives the
//! geodesic spray and the Ricci scalar of a grid structure without forming
//! jets at every node.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array3, Axis, Zip};
use rustfft::num_complex::Complex64;

use crate::chart::{base_derivative, BaseGrid, DerivMode, FiberGrid};
use crate::error::{FinslerError, Result};
use crate::jet::Jet;
use crate::numerics::{trig_interpolate, SpectralAxis};
use crate::structure::{Chart, FinslerStructure, Mode};

/// Fiber (angle) calculus on profiles.
#[derive(Debug, Clone)]
pub struct FiberCalculus {
    spectral: SpectralAxis,
    pub cos: Array1<f64>,
    pub sin: Array1<f64>,
}

impl FiberCalculus {
    pub fn new(fiber: &FiberGrid) -> Self {
        let th = Array1::from(fiber.angles());
        FiberCalculus {
            spectral: SpectralAxis::new(fiber.count, 2.0 * PI),
            cos: th.mapv(f64::cos),
            sin: th.mapv(f64::sin),
        }
    }

    pub fn count(&self) -> usize {
        self.cos.len()
    }

    pub fn dtheta(&self, f: &Array3<f64>, order: usize) -> Array3<f64> {
        self.spectral.differentiate(f, 2, order)
    }

    /// Fiber Fourier modes `|m| ≤ keep` of `f`.
    pub fn low_pass(&self, f: &Array3<f64>, keep: usize) -> Array3<f64> {
        self.spectral.low_pass(f, 2, keep)
    }

    /// Profiles of `∂f/∂y¹` and `∂f/∂y²` for a `p`-homogeneous `f`.
    pub fn dy(&self, f: &Array3<f64>, p: f64) -> [Array3<f64>; 2] {
        let ft = self.dtheta(f, 1);
        let mut a = Array3::zeros(f.raw_dim());
        let mut b = Array3::zeros(f.raw_dim());
        let n = self.count();
        Zip::indexed(&mut a)
            .and(&mut b)
            .and(f)
            .and(&ft)
            .for_each(|(_, _, k), a, b, &v, &vt| {
                let (c, s) = (self.cos[k % n], self.sin[k % n]);
                *a = p * c * v - s * vt;
                *b = p * s * v + c * vt;
            });
        [a, b]
    }

    /// Profile of the coordinate function `y^i` (1-homogeneous).
    pub fn y(&self, i: usize) -> &Array1<f64> {
        if i == 0 {
            &self.cos
        } else {
            &self.sin
        }
    }
}

/// Symmetric 2x2 field `(t₁₁, t₁₂, t₂₂)`.
pub type SymField = [Array3<f64>; 3];

/// Metric, Ricci scalar and directional curvature of a sampled surface.
#[derive(Debug, Clone)]
pub struct GridCurvature {
    /// `F²` at `y = e(θ)`.
    pub lambda: Array3<f64>,
    pub g: SymField,
    /// Profile of the 2-homogeneous Ricci scalar `Ric`.
    pub ric: Array3<f64>,
    /// `H(u, u) = Ric / F²`.
    pub huu: Array3<f64>,
}

/// Smallest eigenvalue of a symmetric 2x2 field and the node where it occurs.
pub fn min_eigenvalue(g: &SymField) -> (f64, [usize; 3]) {
    let mut best = (f64::INFINITY, [0, 0, 0]);
    for ((i, j, k), &a) in g[0].indexed_iter() {
        let b = g[1][[i, j, k]];
        let d = g[2][[i, j, k]];
        let lo = 0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt();
        if lo < best.0 || lo.is_nan() {
            best = (lo, [i, j, k]);
            if lo.is_nan() {
                break;
            }
        }
    }
    best
}

/// Inverse of a symmetric 2x2 field.
pub fn inverse(g: &SymField) -> SymField {
    let det = &g[0] * &g[2] - &g[1] * &g[1];
    [&g[2] / &det, -&g[1] / &det, &g[0] / &det]
}

/// `t^{ij} s_ij`-style trace `g^{ij} t_ij` given `g⁻¹`.
pub fn trace(ginv: &SymField, t: &SymField) -> Array3<f64> {
    &ginv[0] * &t[0] + &(&ginv[1] * &t[1]) * 2.0 + &ginv[2] * &t[2]
}

/// `½ ∂²f/∂y^i∂y^j` for a 2-homogeneous profile, symmetrized.
pub fn half_hessian(f: &Array3<f64>, p: f64, fc: &FiberCalculus) -> SymField {
    let [f1, f2] = fc.dy(f, p);
    let [f11, f12] = fc.dy(&f1, p - 1.0);
    let [f21, f22] = fc.dy(&f2, p - 1.0);
    [f11 * 0.5, (f12 + f21) * 0.25, f22 * 0.5]
}

/// Spray and Ricci scalar of the structure `F = |y| e^{ℓ}` sampled as
/// `ℓ(x, θ) = log F(x, e(θ))`.
pub fn grid_curvature(logf: &Array3<f64>, grid: &BaseGrid, fc: &FiberCalculus, mode: DerivMode) -> Result<GridCurvature> {
    check_shape(logf, grid, fc)?;
    let lambda = logf.mapv(|v| (2.0 * v).exp());
    let g = half_hessian(&lambda, 2.0, fc);
    let (lo, node) = min_eigenvalue(&g);
    if !(lo > 0.0) {
        return Err(FinslerError::ConvexityLoss { node, min_eigenvalue: lo });
    }
    let gi = inverse(&g);
    let ly = fc.dy(&lambda, 2.0);
    let dx = |f: &Array3<f64>, a: usize| base_derivative(f, grid, a, 1, mode);
    let lx = [dx(&lambda, 0)?, dx(&lambda, 1)?];
    // rhs_h = ∂²F²/∂y^h∂x^j y^j − ∂F²/∂x^h
    let mut rhs = Vec::with_capacity(2);
    for h in 0..2 {
        let mut acc = -&lx[h];
        for j in 0..2 {
            let lyx = dx(&ly[h], j)?;
            acc = acc + &lyx * fc.y(j);
        }
        rhs.push(acc);
    }
    let gih = |i: usize, h: usize| match (i, h) {
        (0, 0) => &gi[0],
        (1, 1) => &gi[2],
        _ => &gi[1],
    };
    let spray: Vec<Array3<f64>> = (0..2)
        .map(|i| (gih(i, 0) * &rhs[0] + gih(i, 1) * &rhs[1]) * 0.25)
        .collect();
    let nl: Vec<[Array3<f64>; 2]> = spray.iter().map(|gi| fc.dy(gi, 2.0)).collect();
    let mut ric = Array3::<f64>::zeros(logf.raw_dim());
    for i in 0..2 {
        ric = ric + dx(&spray[i], i)? * 2.0;
        let d2 = fc.dy(&nl[i][i], 1.0);
        for j in 0..2 {
            ric = ric - dx(&nl[i][i], j)? * fc.y(j);
            ric = ric + &spray[j] * &d2[j] * 2.0;
            ric = ric - &nl[i][j] * &nl[j][i];
        }
    }
    let huu = &ric / &lambda;
    Ok(GridCurvature { lambda, g, ric, huu })
}

/// Akbar-Zadeh Ricci tensor `H̃_ij = ½ ∂²Ric/∂y^i∂y^j` and its trace `H̃`.
pub fn akbar_zadeh(ric: &Array3<f64>, g: &SymField, fc: &FiberCalculus) -> (SymField, Array3<f64>) {
    let az = half_hessian(ric, 2.0, fc);
    let tr = trace(&inverse(g), &az);
    (az, tr)
}

/// Largest `‖H̃_ij − (H̃/2) g_ij‖_g` over the fiber at every base node.
pub fn gem_residual_field(az: &SymField, tr: &Array3<f64>, g: &SymField) -> ndarray::Array2<f64> {
    let gi = inverse(g);
    let e: SymField = [&az[0] - &(&g[0] * tr * 0.5), &az[1] - &(&g[1] * tr * 0.5), &az[2] - &(&g[2] * tr * 0.5)];
    // ‖e‖² = g^{ik} g^{jl} e_ij e_kl for a symmetric 2x2 e
    let mut norm = Array3::<f64>::zeros(tr.raw_dim());
    for (idx, o) in norm.indexed_iter_mut() {
        let m = [[gi[0][idx], gi[1][idx]], [gi[1][idx], gi[2][idx]]];
        let t = [[e[0][idx], e[1][idx]], [e[1][idx], e[2][idx]]];
        let mut acc = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        acc += m[i][k] * m[j][l] * t[i][j] * t[k][l];
                    }
                }
            }
        }
        *o = acc.max(0.0).sqrt();
    }
    norm.map_axis(Axis(2), |lane| lane.iter().fold(0.0f64, |m, v| m.max(*v)))
}

/// Liouville density `ρ = p₁ ∂θp₂ − p₂ ∂θp₁` with `p_i = ∂F/∂y^i` at `e(θ)`.
pub fn liouville_from_logf(logf: &Array3<f64>, fc: &FiberCalculus) -> Array3<f64> {
    let f = logf.mapv(f64::exp);
    let [p1, p2] = fc.dy(&f, 1.0);
    let t1 = fc.dtheta(&p1, 1);
    let t2 = fc.dtheta(&p2, 1);
    &p1 * &t2 - &p2 * &t1
}

fn check_shape(field: &Array3<f64>, grid: &BaseGrid, fc: &FiberCalculus) -> Result<()> {
    let sh = field.shape();
    if grid.dim() != 2 || sh[0] != grid.counts[0] || sh[1] != grid.counts[1] || sh[2] != fc.count() {
        return Err(FinslerError::GridMismatch(format!(
            "field shape {:?} vs base {:?} × fiber {}",
            sh,
            grid.counts,
            fc.count()
        )));
    }
    Ok(())
}

/// Sample `ℓ = log F(x, e(θ))` of a periodic surface structure on the grid.
pub fn sample_logf(fs: &dyn FinslerStructure, grid: &BaseGrid, fiber: &FiberGrid) -> Result<Array3<f64>> {
    if fs.dim() != 2 || grid.dim() != 2 {
        return Err(FinslerError::UnsupportedDimension(fs.dim()));
    }
    let x1 = grid.axis_coords(0);
    let x2 = grid.axis_coords(1);
    let th = fiber.angles();
    let out = Array3::from_shape_fn((x1.len(), x2.len(), th.len()), |(i, j, k)| {
        fs.eval(&[x1[i], x2[j]], &[th[k].cos(), th[k].sin()]).ln()
    });
    if let Some(((i, j, k), v)) = out.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(FinslerError::InvalidParameter(format!(
            "F is not positive at node ({i}, {j}, {k}): log F = {v}"
        )));
    }
    Ok(out)
}

/// A structure reconstructed from `ℓ` samples:
/// `F(x, y) = |y| exp(interp ℓ(x, θ(y)))`, with `x` snapped to the nearest
/// base node and trigonometric interpolation along the fiber.
#[derive(Debug, Clone)]
pub struct GridFinsler {
    grid: BaseGrid,
    coeffs: Vec<Vec<Complex64>>,
}

impl GridFinsler {
    pub fn new(logf: &Array3<f64>, grid: &BaseGrid, fiber: &FiberGrid) -> Result<Self> {
        let fc = FiberCalculus::new(fiber);
        check_shape(logf, grid, &fc)?;
        let sp = SpectralAxis::new(fiber.count, 2.0 * PI);
        let (n1, n2) = (grid.counts[0], grid.counts[1]);
        let mut coeffs = Vec::with_capacity(n1 * n2);
        for i in 0..n1 {
            for j in 0..n2 {
                let lane: Vec<f64> = logf.slice(s![i, j, ..]).to_vec();
                coeffs.push(sp.coefficients(&lane));
            }
        }
        Ok(GridFinsler {
            grid: grid.clone(),
            coeffs,
        })
    }

    fn node(&self, x: &[f64]) -> usize {
        let idx = |a: usize| {
            let h = self.grid.spacing(a);
            let n = self.grid.counts[a] as i64;
            ((x[a] / h).round() as i64).rem_euclid(n) as usize
        };
        idx(0) * self.grid.counts[1] + idx(1)
    }

    /// Interpolated `ℓ` at base node nearest to `x` and angle `theta`.
    pub fn log_profile(&self, x: &[f64], theta: f64) -> f64 {
        trig_interpolate(&self.coeffs[self.node(x)], theta)
    }
}

impl FinslerStructure for GridFinsler {
    fn dim(&self) -> usize {
        2
    }

    fn chart(&self) -> Chart {
        Chart::Torus {
            lengths: self.grid.lengths.clone(),
        }
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
        r * self.log_profile(x, y[1].atan2(y[0])).exp()
    }

    fn eval_jet(&self, x: &[Jet], y: &[Jet]) -> Jet {
        let xv = [x[0].value(), x[1].value()];
        let c = &self.coeffs[self.node(&xv)];
        let n = c.len();
        let r = (y[0].clone() * &y[0] + y[1].clone() * &y[1]).sqrt();
        let rinv = r.recip();
        // z = e^{iθ(y)} = (y¹ + i y²)/|y|, built up as powers z^m
        let zr = y[0].clone() * &rinv;
        let zi = y[1].clone() * &rinv;
        let (mut pr, mut pi) = (zr.clone(), zi.clone());
        let mut ell = r.constant_like(c[0].re);
        for m in 1..=n / 2 {
            if m > 1 {
                let nr = pr.clone() * &zr - pi.clone() * &zi;
                let ni = pr * &zi + pi * &zr;
                pr = nr;
                pi = ni;
            }
            let w = if m == n / 2 { 1.0 } else { 2.0 };
            ell = ell + &(pr.clone() * (w * c[m].re) - pi.clone() * (w * c[m].im));
        }
        r * &ell.exp()
    }

    fn name(&self) -> String {
        "grid".into()
    }

    fn mode(&self) -> Mode {
        Mode::Grid
    }
}
