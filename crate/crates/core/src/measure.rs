//! Liouville measure on the indicatrix bundle, integrals over `SM`, the
//! total curvature functional and the global inner product on symmetric
//! 2-forms.
//!
//! For surfaces the Hilbert form `ω = p_i dx^i`, `p_i = ∂F/∂y^i`, pulled back
//! along `(x, θ) ↦ (x, e(θ)/F(x, e(θ)))` gives
//! `η = (p₁ ∂θp₂ − p₂ ∂θp₁) dx¹ ∧ dx² ∧ dθ`, oriented so that the Euclidean
//! density is 1.

use ndarray::{Array2, Array3, Axis, Zip};
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{structure_jet, BaseGrid, BaseMode, DerivMode, FiberGrid};
use crate::connections::Pointwise;
use crate::error::{FinslerError, Result};
use crate::grid::{self, FiberCalculus, SymField};
use crate::numerics::pairwise_sum;
use crate::structure::FinslerStructure;

struct NodeData {
    rho: f64,
    f: f64,
    g: [f64; 3],
}

fn node_data(fs: &dyn FinslerStructure, x: &[f64], theta: f64) -> Result<NodeData> {
    let (c, s) = (theta.cos(), theta.sin());
    let jet = structure_jet(fs, x, &[c, s], 2, 0, BaseMode::Analytic, false)?;
    let f = jet.value();
    let p = [jet.d(2).value(), jet.d(3).value()];
    let h = |i: usize, j: usize| jet.d(2 + i).d(2 + j).value();
    // ∂θ p_i = F_{y^i y^j} e'(θ)^j with e' = (−sin θ, cos θ)
    let t1 = -s * h(0, 0) + c * h(0, 1);
    let t2 = -s * h(1, 0) + c * h(1, 1);
    let g = [
        f * h(0, 0) + p[0] * p[0],
        f * h(0, 1) + p[0] * p[1],
        f * h(1, 1) + p[1] * p[1],
    ];
    Ok(NodeData {
        rho: p[0] * t2 - p[1] * t1,
        f,
        g,
    })
}

fn require_surface(fs: &dyn FinslerStructure) -> Result<()> {
    if fs.dim() != 2 {
        return Err(FinslerError::UnsupportedDimension(fs.dim()));
    }
    Ok(())
}

/// Liouville density at `(x, e(θ))`. It vanishes where `g` degenerates
/// (e.g. the quartic norm on the coordinate axes) and is an error where it is
/// negative.
pub fn liouville_density(fs: &dyn FinslerStructure, x: &[f64], theta: f64) -> Result<f64> {
    require_surface(fs)?;
    let d = node_data(fs, x, theta)?;
    if !(d.rho >= 0.0) {
        return Err(FinslerError::SingularMetric {
            min_eigenvalue: d.rho,
            x: x.to_vec(),
            y: vec![theta.cos(), theta.sin()],
        });
    }
    Ok(d.rho)
}

/// `∫ ρ(x, θ) dθ` by the periodic trapezoidal rule on `n_theta` angles.
pub fn fiber_measure(fs: &dyn FinslerStructure, x: &[f64], n_theta: usize) -> Result<f64> {
    let fiber = FiberGrid::new(n_theta)?;
    let vals = fiber
        .angles()
        .into_iter()
        .map(|t| liouville_density(fs, x, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&vals) * fiber.spacing())
}

/// Density, indicatrix radius and fundamental tensor on a surface grid.
#[derive(Debug, Clone)]
pub struct MeasureField {
    pub grid: BaseGrid,
    pub fiber: FiberGrid,
    pub rho: Array3<f64>,
    /// `r(x, θ) = 1 / F(x, e(θ))`.
    pub radius: Array3<f64>,
    /// `g_ij(x, e(θ))` as `(g₁₁, g₁₂, g₂₂)`.
    pub metric: SymField,
}

impl MeasureField {
    /// Exact pointwise density from jets of `F` at every node.
    pub fn from_structure(fs: &dyn FinslerStructure, grid: &BaseGrid, fiber: &FiberGrid) -> Result<Self> {
        require_surface(fs)?;
        if grid.dim() != 2 {
            return Err(FinslerError::GridMismatch("surface measure needs a 2-D base grid".into()));
        }
        let (n1, n2, nt) = (grid.counts[0], grid.counts[1], fiber.count);
        let angles = fiber.angles();
        let rows: Vec<Vec<NodeData>> = (0..n1 * n2)
            .into_par_iter()
            .map(|ij| {
                let x = [grid.coord(0, ij / n2), grid.coord(1, ij % n2)];
                angles.iter().map(|&t| node_data(fs, &x, t)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let at = |i: usize, j: usize, k: usize| &rows[i * n2 + j][k];
        let shape = (n1, n2, nt);
        let field = Self {
            grid: grid.clone(),
            fiber: fiber.clone(),
            rho: Array3::from_shape_fn(shape, |(i, j, k)| at(i, j, k).rho),
            radius: Array3::from_shape_fn(shape, |(i, j, k)| 1.0 / at(i, j, k).f),
            metric: [0, 1, 2].map(|c| Array3::from_shape_fn(shape, |(i, j, k)| at(i, j, k).g[c])),
        };
        field.check_positive()?;
        Ok(field)
    }

    /// Density and metric of `F = |y| e^{ℓ}` from the samples `ℓ`, with
    /// fiber derivatives of the trigonometric interpolant.
    pub fn from_logf(logf: &Array3<f64>, grid: &BaseGrid, fiber: &FiberGrid) -> Result<Self> {
        let fc = FiberCalculus::new(fiber);
        let sh = logf.shape();
        if grid.dim() != 2 || sh != [grid.counts[0], grid.counts[1], fiber.count] {
            return Err(FinslerError::GridMismatch(format!(
                "field shape {:?} vs base {:?} × fiber {}",
                sh, grid.counts, fiber.count
            )));
        }
        let lambda = logf.mapv(|v| (2.0 * v).exp());
        let metric = grid::half_hessian(&lambda, 2.0, &fc);
        let (lo, node) = grid::min_eigenvalue(&metric);
        if !(lo > 0.0) {
            return Err(FinslerError::ConvexityLoss { node, min_eigenvalue: lo });
        }
        let field = Self {
            grid: grid.clone(),
            fiber: fiber.clone(),
            rho: grid::liouville_from_logf(logf, &fc),
            radius: logf.mapv(|v| (-v).exp()),
            metric,
        };
        field.check_positive()?;
        Ok(field)
    }

    fn check_positive(&self) -> Result<()> {
        if let Some(((i, j, k), &v)) = self.rho.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
            return Err(FinslerError::ConvexityLoss {
                node: [i, j, k],
                min_eigenvalue: v,
            });
        }
        Ok(())
    }

    /// Quadrature weight `Δx¹ Δx² Δθ`.
    pub fn weight(&self) -> f64 {
        self.grid.cell_volume() * self.fiber.spacing()
    }

    /// Indicatrix bundle volume `V = ∫ η`.
    pub fn volume(&self) -> f64 {
        pairwise_sum(self.rho.as_slice().expect("standard layout")) * self.weight()
    }

    /// `∫ ρ dθ` at every base node.
    pub fn fiber_totals(&self) -> Array2<f64> {
        let h = self.fiber.spacing();
        self.rho
            .map_axis(Axis(2), |lane| pairwise_sum(&lane.to_vec()) * h)
    }

    fn check(&self, field: &Array3<f64>) -> Result<()> {
        if field.shape() != self.rho.shape() {
            return Err(FinslerError::GridMismatch(format!(
                "field shape {:?} vs measure shape {:?}",
                field.shape(),
                self.rho.shape()
            )));
        }
        Ok(())
    }
}

/// `∫_{SM} f η` by the periodic trapezoidal rule with pairwise summation.
pub fn sm_integrate(field: &Array3<f64>, measure: &MeasureField) -> Result<f64> {
    measure.check(field)?;
    let prod: Vec<f64> = Zip::from(field)
        .and(&measure.rho)
        .map_collect(|f, r| f * r)
        .into_iter()
        .collect();
    Ok(pairwise_sum(&prod) * measure.weight())
}

/// Weight function `c(x)` in `Ĥ = H̃ − c(x) H(u, u)`.
#[derive(Debug, Clone, Default)]
pub enum CFun {
    #[default]
    Zero,
    Constant(f64),
    /// Values at the base nodes.
    Tabulated(Array2<f64>),
}

impl CFun {
    fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            CFun::Zero => 0.0,
            CFun::Constant(c) => *c,
            CFun::Tabulated(t) => t[[i, j]],
        }
    }

    fn check(&self, grid: &BaseGrid) -> Result<()> {
        if let CFun::Tabulated(t) = self {
            if t.shape() != grid.counts.as_slice() {
                return Err(FinslerError::GridMismatch(format!(
                    "c(x) table {:?} vs base {:?}",
                    t.shape(),
                    grid.counts
                )));
            }
        }
        Ok(())
    }
}

/// Curvature scalars sampled on `(x, θ)`.
#[derive(Debug, Clone)]
pub struct CurvatureFields {
    pub ricci_directional: Array3<f64>,
    pub h_tilde: Array3<f64>,
    /// Largest trace-free part of `H̃_ij` over the fiber at each base node.
    pub gem_residual: Array2<f64>,
}

/// How `H(u, u)` is obtained at the grid nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvatureSource {
    /// Jets at every node, base derivatives exact or by finite differences.
    Pointwise(BaseMode),
    /// From the sampled `ℓ = log F` with base derivatives on the grid.
    Grid(DerivMode),
}

impl Default for CurvatureSource {
    fn default() -> Self {
        CurvatureSource::Pointwise(BaseMode::Analytic)
    }
}

/// Measure and curvature fields of a surface structure on a periodic grid.
pub fn curvature_fields(
    fs: &dyn FinslerStructure,
    grid: &BaseGrid,
    fiber: &FiberGrid,
    source: CurvatureSource,
) -> Result<(MeasureField, CurvatureFields)> {
    require_surface(fs)?;
    let fc = FiberCalculus::new(fiber);
    match source {
        CurvatureSource::Grid(mode) => {
            let logf = grid::sample_logf(fs, grid, fiber)?;
            fields_from_logf(&logf, grid, fiber, mode)
        }
        CurvatureSource::Pointwise(bm) => {
            let m = MeasureField::from_structure(fs, grid, fiber)?;
            let (n1, n2, nt) = (grid.counts[0], grid.counts[1], fiber.count);
            let angles = fiber.angles();
            let pw = Pointwise::with_mode(fs, bm);
            let rows: Vec<Vec<f64>> = (0..n1 * n2)
                .into_par_iter()
                .map(|ij| {
                    let x = [grid.coord(0, ij / n2), grid.coord(1, ij % n2)];
                    angles
                        .iter()
                        .map(|t| pw.ricci_directional(&x, &[t.cos(), t.sin()]))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let huu = Array3::from_shape_fn((n1, n2, nt), |(i, j, k)| rows[i * n2 + j][k]);
            let ric = &huu / &m.radius.mapv(|r| r * r);
            let (az, tr) = grid::akbar_zadeh(&ric, &m.metric, &fc);
            let gem = grid::gem_residual_field(&az, &tr, &m.metric);
            Ok((
                m,
                CurvatureFields {
                    ricci_directional: huu,
                    h_tilde: tr,
                    gem_residual: gem,
                },
            ))
        }
    }
}

/// Measure and curvature fields of `F = |y| e^{ℓ}` given the samples `ℓ`.
pub fn fields_from_logf(
    logf: &Array3<f64>,
    grid: &BaseGrid,
    fiber: &FiberGrid,
    mode: DerivMode,
) -> Result<(MeasureField, CurvatureFields)> {
    let fc = FiberCalculus::new(fiber);
    let gc = grid::grid_curvature(logf, grid, &fc, mode)?;
    let m = MeasureField {
        grid: grid.clone(),
        fiber: fiber.clone(),
        rho: grid::liouville_from_logf(logf, &fc),
        radius: logf.mapv(|v| (-v).exp()),
        metric: gc.g.clone(),
    };
    m.check_positive()?;
    let (az, tr) = grid::akbar_zadeh(&gc.ric, &gc.g, &fc);
    let gem = grid::gem_residual_field(&az, &tr, &gc.g);
    Ok((
        m,
        CurvatureFields {
            ricci_directional: gc.huu,
            h_tilde: tr,
            gem_residual: gem,
        },
    ))
}

/// Indicatrix volume, total curvature `I = ∫ Ĥ η`, its normalization and
/// average.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionalReport {
    pub volume: f64,
    pub i: f64,
    pub i_normalized: f64,
    pub c_bar: f64,
    pub base_nodes: Vec<usize>,
    pub fiber_nodes: usize,
}

/// Evaluate the functional from precomputed fields.
pub fn functional_from_fields(m: &MeasureField, f: &CurvatureFields, c_fun: &CFun) -> Result<FunctionalReport> {
    c_fun.check(&m.grid)?;
    let mut hat = f.h_tilde.clone();
    Zip::indexed(&mut hat)
        .and(&f.ricci_directional)
        .for_each(|(i, j, _), h, &huu| *h -= c_fun.at(i, j) * huu);
    let i = sm_integrate(&hat, m)?;
    let volume = m.volume();
    let n = m.grid.dim() as f64;
    Ok(FunctionalReport {
        volume,
        i,
        i_normalized: volume.powf((2.0 - n) / n) * i,
        c_bar: i / volume,
        base_nodes: m.grid.counts.clone(),
        fiber_nodes: m.fiber.count,
    })
}

/// `I = ∫_{SM} (H̃ − c(x) H(u, u)) η` on a periodic surface grid.
pub fn functional_i(
    fs: &dyn FinslerStructure,
    c_fun: &CFun,
    grid: &BaseGrid,
    fiber: &FiberGrid,
    source: CurvatureSource,
) -> Result<FunctionalReport> {
    if !fs.chart().is_periodic() {
        return Err(FinslerError::NonPeriodicAxis { axis: 0 });
    }
    let (m, f) = curvature_fields(fs, grid, fiber, source)?;
    functional_from_fields(&m, &f, c_fun)
}

/// `(a, b)_g = ∫ g^{ik} g^{jl} a_ij b_kl η`.
pub fn global_inner(a: &SymField, b: &SymField, m: &MeasureField) -> Result<f64> {
    for t in a.iter().chain(b.iter()) {
        m.check(t)?;
    }
    let gi = grid::inverse(&m.metric);
    let mut pointwise = Array3::<f64>::zeros(m.rho.raw_dim());
    for (idx, out) in pointwise.indexed_iter_mut() {
        let q = [[gi[0][idx], gi[1][idx]], [gi[1][idx], gi[2][idx]]];
        let av = [[a[0][idx], a[1][idx]], [a[1][idx], a[2][idx]]];
        let bv = [[b[0][idx], b[1][idx]], [b[1][idx], b[2][idx]]];
        // ⟨a, b⟩ = tr(g⁻¹ a g⁻¹ b)
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        acc += q[i][k] * q[j][l] * av[i][j] * bv[k][l];
                    }
                }
            }
        }
        *out = acc;
    }
    sm_integrate(&pointwise, m)
}
