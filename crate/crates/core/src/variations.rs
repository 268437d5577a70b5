//! Tangent vectors of the space of Finsler metrics: conformal and
//! Randers-family variations, the Lie derivative of `g` along a complete
//! lift, its adjoint `δ`, codifferentials, the trace split and numerical
//! checks of the first-variation formulas.
//!
//! Fields on `SM` are sampled at `(x, e(θ))`; everything here is
//! 0-homogeneous so the sampling radius does not matter.

use std::sync::Arc;

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{structure_jet, BaseGrid, BaseMode, FiberGrid};
use crate::connections::{cov_deriv_values, frame_from_jets, nonlinear_connection, spray, HorizontalFrame, JetField, SprayJets};
use crate::error::{FinslerError, Result};
use crate::grid::{self, FiberCalculus, SymField};
use crate::jet::{Jet, JetSpace};
use crate::measure::{functional_i, global_inner, sm_integrate, CFun, CurvatureSource, MeasureField};
use crate::scalar::Scalar;
use crate::structure::{check_vector, sample_point, Chart, FinslerStructure, Mode, SymTensor2};

/// `a cos(k·x + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amp: f64,
    pub freq: Vec<f64>,
    #[serde(default)]
    pub phase: f64,
}

/// A constant plus a finite sum of [`TrigTerm`]s, used for scalar
/// functions, vector fields and 1-forms on the base.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigSeries {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigSeries {
    pub fn constant(c: f64) -> Self {
        TrigSeries {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn cosine(amp: f64, freq: &[f64], phase: f64) -> Self {
        TrigSeries {
            constant: 0.0,
            terms: vec![TrigTerm {
                amp,
                freq: freq.to_vec(),
                phase,
            }],
        }
    }

    pub fn plus(mut self, other: TrigSeries) -> Self {
        self.constant += other.constant;
        self.terms.extend(other.terms);
        self
    }

    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        let mut acc = x[0].constant_like(self.constant);
        for t in &self.terms {
            let mut arg = x[0].constant_like(t.phase);
            for (xi, k) in x.iter().zip(&t.freq) {
                arg = arg + &(xi.clone() * *k);
            }
            acc = acc + &(arg.cos() * t.amp);
        }
        acc
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for t in &self.terms {
            let arg: f64 = t.phase + x.iter().zip(&t.freq).map(|(a, k)| a * k).sum::<f64>();
            for (gi, k) in g.iter_mut().zip(&t.freq) {
                *gi -= t.amp * k * arg.sin();
            }
        }
        g
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.amp == 0.0)
    }
}

/// A vector field `X^k(x)` (or a 1-form `β_k(x)`) on the base.
pub type BaseField = Vec<TrigSeries>;

fn field_values(x_field: &[TrigSeries], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let val: Vec<f64> = x_field.iter().map(|c| c.value(x)).collect();
    let mut jac = vec![0.0; n * n];
    for (k, c) in x_field.iter().enumerate() {
        for (i, d) in c.gradient(x).into_iter().enumerate() {
            jac[k * n + i] = d;
        }
    }
    (val, jac)
}

/// How a variation field was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Conformal,
    Lie,
    Family,
    Raw,
}

/// Closed-form source of a variation `h = ∂t g_t |₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Generator {
    /// `g_t = e^{t k(x)} g`, so `h = k g`.
    Conformal { k: TrigSeries },
    /// `F_t = F + t β(x)·y`, so `h_ij = ∂²(F β·y)/∂y^i∂y^j`.
    Randers { beta: BaseField },
}

impl Generator {
    pub fn provenance(&self) -> Provenance {
        match self {
            Generator::Conformal { .. } => Provenance::Conformal,
            Generator::Randers { .. } => Provenance::Family,
        }
    }

    /// Jets of `h_ij`, row-major, from a jet of `F` in the same space as
    /// `xs`, `ys`; two fiber orders are consumed.
    fn h_jets(&self, f: &Jet, xs: &[Jet], ys: &[Jet]) -> Vec<Jet> {
        let n = ys.len();
        let q = match self {
            Generator::Conformal { k } => f.clone() * f * &k.eval(xs) * 0.5,
            Generator::Randers { beta } => {
                let mut b = f.constant_like(0.0);
                for (bi, yi) in beta.iter().zip(ys) {
                    b = b + &(bi.eval(xs) * yi);
                }
                f.clone() * &b
            }
        };
        let first: Vec<Jet> = (0..n).map(|i| q.d(n + i)).collect();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(if j < i { first[j].d(n + i) } else { first[i].d(n + j) });
            }
        }
        out
    }

    fn check(&self, n: usize) -> Result<()> {
        if let Generator::Randers { beta } = self {
            if beta.len() != n {
                return Err(FinslerError::InvalidParameter(format!(
                    "Randers drift has {} components for a {n}-dimensional structure",
                    beta.len()
                )));
            }
        }
        Ok(())
    }

    /// `h_ij(x, y)`.
    pub fn h_at(&self, fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<SymTensor2> {
        check_vector(fs, x, y)?;
        let n = fs.dim();
        self.check(n)?;
        let f = structure_jet(fs, x, y, 2, 0, BaseMode::Analytic, false)?;
        let space = f.space();
        let xs: Vec<Jet> = (0..n).map(|i| space.constant(x[i])).collect();
        let ys: Vec<Jet> = (0..n).map(|i| space.variable(n + i, y[i])).collect();
        let h = self.h_jets(&f, &xs, &ys);
        Ok(SymTensor2::from_fn(n, |i, j| h[i * n + j].value()))
    }
}

/// Residuals of membership in the tangent space: zero-homogeneity
/// `y^k ∂h_ij/∂y^k` and total symmetry `∂h_ij/∂y^k − ∂h_ik/∂y^j`, both
/// relative to `max |h|`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Membership {
    pub homogeneity: f64,
    pub symmetry: f64,
}

impl Membership {
    pub fn worst(&self) -> f64 {
        self.homogeneity.max(self.symmetry)
    }
}

/// A symmetric 2-form field on `SM` sampled on a surface grid.
#[derive(Debug, Clone)]
pub struct VariationField {
    pub provenance: Provenance,
    pub grid: BaseGrid,
    pub fiber: FiberGrid,
    pub h: SymField,
    pub membership: Membership,
    pub generator: Option<Generator>,
}

/// Call `f` at every node `(x, e(θ))`, in row-major order.
fn map_nodes<T: Send>(
    grid: &BaseGrid,
    fiber: &FiberGrid,
    f: impl Fn(&[f64], &[f64]) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if grid.dim() != 2 {
        return Err(FinslerError::UnsupportedDimension(grid.dim()));
    }
    let (n1, n2) = (grid.counts[0], grid.counts[1]);
    let angles = fiber.angles();
    let rows: Vec<Vec<T>> = (0..n1 * n2)
        .into_par_iter()
        .map(|ij| {
            let x = [grid.coord(0, ij / n2), grid.coord(1, ij % n2)];
            angles
                .iter()
                .map(|t| f(&x, &[t.cos(), t.sin()]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn to_field(values: &[f64], grid: &BaseGrid, fiber: &FiberGrid) -> Array3<f64> {
    Array3::from_shape_vec((grid.counts[0], grid.counts[1], fiber.count), values.to_vec()).expect("node count matches grid")
}

fn sym_fields(vals: &[SymTensor2], grid: &BaseGrid, fiber: &FiberGrid) -> SymField {
    let comp = |i: usize, j: usize| to_field(&vals.iter().map(|t| t.get(i, j)).collect::<Vec<_>>(), grid, fiber);
    [comp(0, 0), comp(0, 1), comp(1, 1)]
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn generator_membership(gen: &Generator, fs: &dyn FinslerStructure) -> Result<Membership> {
    let n = fs.dim();
    let chart = fs.chart();
    let (mut hom, mut sym, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    for s in 0..8 {
        let (x, y) = sample_point(&chart, n, s);
        let f = structure_jet(fs, &x, &y, 3, 0, BaseMode::Analytic, false)?;
        let space = f.space();
        let xs: Vec<Jet> = (0..n).map(|i| space.constant(x[i])).collect();
        let ys: Vec<Jet> = (0..n).map(|i| space.variable(n + i, y[i])).collect();
        let h = gen.h_jets(&f, &xs, &ys);
        for i in 0..n {
            for j in 0..n {
                let hij = &h[i * n + j];
                scale = scale.max(hij.value().abs());
                let e: f64 = (0..n).map(|k| y[k] * hij.d(n + k).value()).sum();
                hom = hom.max(e.abs());
                for k in 0..n {
                    sym = sym.max((hij.d(n + k).value() - h[i * n + k].d(n + j).value()).abs());
                }
            }
        }
    }
    let s = scale.max(1e-300);
    Ok(Membership {
        homogeneity: hom / s,
        symmetry: sym / s,
    })
}

fn field_membership(h: &SymField, fiber: &FiberGrid) -> Membership {
    let fc = FiberCalculus::new(fiber);
    let d11 = fc.dy(&h[0], 0.0);
    let d12 = fc.dy(&h[1], 0.0);
    let d22 = fc.dy(&h[2], 0.0);
    // ∂₂h₁₁ = ∂₁h₁₂ and ∂₂h₁₂ = ∂₁h₂₂
    let r1 = max_abs((&d11[1] - &d12[0]).into_iter());
    let r2 = max_abs((&d12[1] - &d22[0]).into_iter());
    let scale = h.iter().map(|c| max_abs(c.iter().copied())).fold(1e-300, f64::max);
    Membership {
        homogeneity: 0.0,
        symmetry: r1.max(r2) / scale,
    }
}

fn from_generator(gen: Generator, fs: &dyn FinslerStructure, grid: &BaseGrid, fiber: &FiberGrid) -> Result<VariationField> {
    gen.check(fs.dim())?;
    let vals = map_nodes(grid, fiber, |x, y| gen.h_at(fs, x, y))?;
    Ok(VariationField {
        provenance: gen.provenance(),
        grid: grid.clone(),
        fiber: fiber.clone(),
        h: sym_fields(&vals, grid, fiber),
        membership: generator_membership(&gen, fs)?,
        generator: Some(gen),
    })
}

/// `h = k(x) g`.
pub fn conformal_variation(k: &TrigSeries, fs: &dyn FinslerStructure, grid: &BaseGrid, fiber: &FiberGrid) -> Result<VariationField> {
    from_generator(Generator::Conformal { k: k.clone() }, fs, grid, fiber)
}

/// Tangent of the Randers family `F + t β·y`.
pub fn family_variation(beta: &[TrigSeries], fs: &dyn FinslerStructure, grid: &BaseGrid, fiber: &FiberGrid) -> Result<VariationField> {
    from_generator(Generator::Randers { beta: beta.to_vec() }, fs, grid, fiber)
}

/// An arbitrary sampled field, with its membership residuals measured.
pub fn raw_variation(h: SymField, grid: &BaseGrid, fiber: &FiberGrid) -> Result<VariationField> {
    let want = [grid.counts[0], grid.counts[1], fiber.count];
    if grid.dim() != 2 || h.iter().any(|c| c.shape() != want) {
        return Err(FinslerError::GridMismatch(format!("variation field does not match grid {want:?}")));
    }
    Ok(VariationField {
        provenance: Provenance::Raw,
        grid: grid.clone(),
        fiber: fiber.clone(),
        membership: field_membership(&h, fiber),
        h,
        generator: None,
    })
}

/// Connection data, `∇₀C`, and optionally `h` with `∇h`, at one node.
struct NodeEval {
    frame: HorizontalFrame,
    /// `L_kij = ∇₀ C_kij`.
    landsberg: Vec<f64>,
    h: Vec<f64>,
    /// `∇_l h_ij` at `[(i n + j) n + l]`.
    dh: Vec<f64>,
}

fn node_eval(fs: &dyn FinslerStructure, gen: Option<&Generator>, x: &[f64], y: &[f64]) -> Result<NodeEval> {
    if !fs.analytic_base_partials() {
        return Err(FinslerError::GridModeBaseDerivative);
    }
    let n = fs.dim();
    let s = SprayJets::new(fs, x, y, 4, 1, BaseMode::Analytic)?;
    let frame = frame_from_jets(&s);
    let mut cj = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                cj.push(s.g[k][i].d(n + j) * 0.5);
            }
        }
    }
    let dc = cov_deriv_values(&cj, 0, 3, &frame);
    let landsberg = along(&dc, y);
    let (h, dh) = match gen {
        Some(g) => {
            let xs: Vec<Jet> = (0..n).map(|i| s.space.variable(i, x[i])).collect();
            let hj = g.h_jets(&s.l.sqrt(), &xs, &s.y);
            let dh = cov_deriv_values(&hj, 0, 2, &frame);
            (hj.iter().map(Jet::value).collect(), dh)
        }
        None => (Vec::new(), Vec::new()),
    };
    Ok(NodeEval {
        frame,
        landsberg,
        h,
        dh,
    })
}

fn along(d: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    d.chunks(n).map(|c| c.iter().zip(y).map(|(a, b)| a * b).sum()).collect()
}

fn lie_from_frame(frame: &HorizontalFrame, xv: &[f64], xj: &[f64], y: &[f64]) -> SymTensor2 {
    let n = frame.n;
    // ∇_i X^k = ∂_i X^k + Γ^k_mi X^m
    let mut nx = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..n {
            let mut v = xj[k * n + i];
            for m in 0..n {
                v += frame.gamma(k, m, i) * xv[m];
            }
            nx[k * n + i] = v;
        }
    }
    let y_nabla: Vec<f64> = (0..n).map(|k| (0..n).map(|m| y[m] * nx[k * n + m]).sum()).collect();
    SymTensor2::from_fn(n, |i, j| {
        let mut v = 0.0;
        for k in 0..n {
            v += frame.g(j, k) * nx[k * n + i] + frame.g(i, k) * nx[k * n + j] + 2.0 * y_nabla[k] * frame.c(k, i, j);
        }
        v
    })
}

/// `(L_X̂ g)_ij = g_jk ∇_i X^k + g_ik ∇_j X^k + 2 y^m ∇_m X^k C_kij` at
/// `(x, y)`, `X̂` the complete lift of `X`.
pub fn lie_derivative_at(field: &[TrigSeries], fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<SymTensor2> {
    let n = fs.dim();
    if field.len() != n {
        return Err(FinslerError::InvalidParameter(format!(
            "vector field has {} components for a {n}-dimensional structure",
            field.len()
        )));
    }
    let s = SprayJets::new(fs, x, y, 3, 1, BaseMode::Analytic)?;
    let frame = frame_from_jets(&s);
    let (xv, xj) = field_values(field, x);
    Ok(lie_from_frame(&frame, &xv, &xj, y))
}

/// `L_X̂ g` sampled on a surface grid.
pub fn lie_derivative_metric(field: &[TrigSeries], fs: &dyn FinslerStructure, grid: &BaseGrid, fiber: &FiberGrid) -> Result<VariationField> {
    let vals = map_nodes(grid, fiber, |x, y| lie_derivative_at(field, fs, x, y))?;
    let h = sym_fields(&vals, grid, fiber);
    Ok(VariationField {
        provenance: Provenance::Lie,
        grid: grid.clone(),
        fiber: fiber.clone(),
        membership: field_membership(&h, fiber),
        h,
        generator: None,
    })
}

fn delta_from_node(e: &NodeEval, y: &[f64]) -> Vec<f64> {
    let f = &e.frame;
    let n = f.n;
    let h = |i: usize, j: usize| e.h[i * n + j];
    let dh = |i: usize, j: usize, l: usize| e.dh[(i * n + j) * n + l];
    let l3 = |k: usize, i: usize, j: usize| e.landsberg[(k * n + i) * n + j];
    // ∇₀C^j = g^{ja} g^{bc} L_bca
    let j_low: Vec<f64> = (0..n)
        .map(|a| {
            let mut v = 0.0;
            for b in 0..n {
                for c in 0..n {
                    v += f.ginv(b, c) * l3(b, c, a);
                }
            }
            v
        })
        .collect();
    let dc_up: Vec<f64> = (0..n).map(|j| (0..n).map(|a| f.ginv(j, a) * j_low[a]).sum()).collect();
    // h^{ij} and ∇₀h^{ij}
    let raise = |t: &dyn Fn(usize, usize) -> f64, i: usize, j: usize| {
        let mut v = 0.0;
        for a in 0..n {
            for b in 0..n {
                v += f.ginv(i, a) * f.ginv(j, b) * t(a, b);
            }
        }
        v
    };
    let dh0 = |a: usize, b: usize| (0..n).map(|l| y[l] * dh(a, b, l)).sum::<f64>();
    let h_up: Vec<f64> = (0..n * n).map(|c| raise(&h, c / n, c % n)).collect();
    let dh0_up: Vec<f64> = (0..n * n).map(|c| raise(&dh0, c / n, c % n)).collect();
    (0..n)
        .map(|k| {
            let mut div = 0.0;
            for i in 0..n {
                for l in 0..n {
                    div += f.ginv(i, l) * dh(i, k, l);
                }
            }
            let mut v = div;
            for j in 0..n {
                v -= h(k, j) * dc_up[j];
            }
            for i in 0..n {
                for j in 0..n {
                    v += l3(k, i, j) * h_up[i * n + j] + f.c(k, i, j) * dh0_up[i * n + j];
                }
            }
            -v
        })
        .collect()
}

/// `δh_k = −(∇^i h_ik − h_kj ∇₀C^j + ∇₀C_kij h^{ij} + C_kij ∇₀h^{ij})` at
/// `(x, y)`.
pub fn divergence_delta_at(gen: &Generator, fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    gen.check(fs.dim())?;
    check_vector(fs, x, y)?;
    let e = node_eval(fs, Some(gen), x, y)?;
    Ok(delta_from_node(&e, y))
}

/// `δh` on the grid of `v`, one field per component.
pub fn divergence_delta(v: &VariationField, fs: &dyn FinslerStructure) -> Result<Vec<Array3<f64>>> {
    let gen = v.generator.as_ref().ok_or_else(|| {
        FinslerError::InvalidParameter("δh needs a variation with a closed-form generator (conformal or family)".into())
    })?;
    let vals = map_nodes(&v.grid, &v.fiber, |x, y| divergence_delta_at(gen, fs, x, y))?;
    Ok((0..2)
        .map(|k| to_field(&vals.iter().map(|d| d[k]).collect::<Vec<_>>(), &v.grid, &v.fiber))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormKind {
    Horizontal,
    Vertical,
}

/// Codifferential of a 1-form on `SM` given as a jet expression:
/// horizontal `δa = −(∇^j a_j − a_j ∇₀C^j)`, vertical
/// `δb = −F g^{ij} ∂b_i/∂y^j`.
pub fn codifferential(form: &JetField, kind: FormKind, fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<f64> {
    if form.upper != 0 || form.lower != 1 {
        return Err(FinslerError::UnsupportedValence(form.upper, form.lower));
    }
    check_vector(fs, x, y)?;
    let n = fs.dim();
    match kind {
        FormKind::Horizontal => {
            let e = node_eval(fs, None, x, y)?;
            let f = &e.frame;
            let space = JetSpace::get(2 * n, n, form.fiber_order + 1, 1);
            let xs: Vec<Jet> = (0..n).map(|i| space.variable(i, x[i])).collect();
            let ys: Vec<Jet> = (0..n).map(|i| space.variable(n + i, y[i])).collect();
            let a = (form.eval)(&xs, &ys);
            let da = cov_deriv_values(&a, 0, 1, f);
            let mut v = 0.0;
            for j in 0..n {
                for l in 0..n {
                    v += f.ginv(j, l) * da[j * n + l];
                }
            }
            for j in 0..n {
                let mut dc = 0.0;
                for a_ in 0..n {
                    let mut jl = 0.0;
                    for b in 0..n {
                        for c in 0..n {
                            jl += f.ginv(b, c) * e.landsberg[(b * n + c) * n + a_];
                        }
                    }
                    dc += f.ginv(j, a_) * jl;
                }
                v -= a[j].value() * dc;
            }
            Ok(-v)
        }
        FormKind::Vertical => {
            let fj = structure_jet(fs, x, y, 2, 0, BaseMode::Analytic, false)?;
            let l = fj.clone() * &fj;
            let g = SymTensor2::from_fn(n, |i, j| 0.5 * l.d(n + i).d(n + j).value());
            let gi = g.inverse().ok_or(FinslerError::SingularMetric {
                min_eigenvalue: g.min_eigenvalue(),
                x: x.to_vec(),
                y: y.to_vec(),
            })?;
            let space = JetSpace::get(2 * n, n, form.fiber_order + 1, 0);
            let xs: Vec<Jet> = (0..n).map(|i| space.constant(x[i])).collect();
            let ys: Vec<Jet> = (0..n).map(|i| space.variable(n + i, y[i])).collect();
            let b = (form.eval)(&xs, &ys);
            let mut v = 0.0;
            for i in 0..n {
                for j in 0..n {
                    v += gi[i * n + j] * b[i].d(n + j).value();
                }
            }
            Ok(-fj.value() * v)
        }
    }
}

/// `h = (tr_g h / n) g + h⊥` with `tr_g h⊥ = 0` pointwise.
pub fn trace_split(h: &SymField, g: &SymField) -> (SymField, SymField) {
    let tr = grid::trace(&grid::inverse(g), h) * 0.5;
    let conf: SymField = [&g[0] * &tr, &g[1] * &tr, &g[2] * &tr];
    let free: SymField = [&h[0] - &conf[0], &h[1] - &conf[1], &h[2] - &conf[2]];
    (conf, free)
}

/// Both sides of `½(L_X̂ g, h) = (X, δh)` and their relative mismatch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Adjointness {
    pub lie_side: f64,
    pub delta_side: f64,
    pub residual: f64,
}

/// `|½(L_X̂ g, h) − (X, δh)| / (1 + |(X, δh)|)` on the grid of `v`.
pub fn adjointness_residual(field: &[TrigSeries], v: &VariationField, fs: &dyn FinslerStructure) -> Result<Adjointness> {
    let gen = v.generator.as_ref().ok_or_else(|| {
        FinslerError::InvalidParameter("adjointness needs a variation with a closed-form generator".into())
    })?;
    if field.len() != 2 || fs.dim() != 2 {
        return Err(FinslerError::UnsupportedDimension(fs.dim()));
    }
    let m = MeasureField::from_structure(fs, &v.grid, &v.fiber)?;
    let vals = map_nodes(&v.grid, &v.fiber, |x, y| {
        let e = node_eval(fs, Some(gen), x, y)?;
        let (xv, xj) = field_values(field, x);
        let lg = lie_from_frame(&e.frame, &xv, &xj, y);
        let d = delta_from_node(&e, y);
        let xd: f64 = xv.iter().zip(&d).map(|(a, b)| a * b).sum();
        Ok((lg, xd))
    })?;
    let lg: Vec<SymTensor2> = vals.iter().map(|v| v.0.clone()).collect();
    let lg = sym_fields(&lg, &v.grid, &v.fiber);
    let xd = to_field(&vals.iter().map(|v| v.1).collect::<Vec<_>>(), &v.grid, &v.fiber);
    let lie_side = 0.5 * global_inner(&lg, &v.h, &m)?;
    let delta_side = sm_integrate(&xd, &m)?;
    Ok(Adjointness {
        lie_side,
        delta_side,
        residual: (lie_side - delta_side).abs() / (1.0 + delta_side.abs()),
    })
}

/// The metric family `t ↦ g_t` generated by `generator` from `base`.
#[derive(Debug, Clone)]
pub struct MetricPath {
    pub base: Arc<dyn FinslerStructure>,
    pub generator: Generator,
}

impl MetricPath {
    pub fn member(&self, t: f64) -> PathMember {
        PathMember {
            base: self.base.clone(),
            generator: self.generator.clone(),
            t,
        }
    }
}

/// `F_t` of a [`MetricPath`].
#[derive(Debug, Clone)]
pub struct PathMember {
    base: Arc<dyn FinslerStructure>,
    generator: Generator,
    t: f64,
}

impl PathMember {
    fn apply<S: Scalar>(&self, f: S, x: &[S], y: &[S]) -> S {
        match &self.generator {
            Generator::Conformal { k } => f * &(k.eval(x) * (0.5 * self.t)).exp(),
            Generator::Randers { beta } => {
                let mut acc = f;
                for (b, yi) in beta.iter().zip(y) {
                    acc = acc + &(b.eval(x) * yi * self.t);
                }
                acc
            }
        }
    }
}

impl FinslerStructure for PathMember {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn chart(&self) -> Chart {
        self.base.chart()
    }
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.apply(self.base.eval(x, y), x, y)
    }
    fn eval_jet(&self, x: &[Jet], y: &[Jet]) -> Jet {
        self.apply(self.base.eval_jet(x, y), x, y)
    }
    fn name(&self) -> String {
        format!("{}+t({})", self.base.name(), self.t)
    }
    fn mode(&self) -> Mode {
        self.base.mode()
    }
    fn analytic_base_partials(&self) -> bool {
        self.base.analytic_base_partials()
    }
}

/// Finite-difference derivative and its predicted value.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivativeCheck {
    pub finite_difference: f64,
    pub predicted: f64,
    pub residual: f64,
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Residuals of the first-variation formulas along a metric path.
#[derive(Debug, Clone, Serialize)]
pub struct VariationReport {
    pub step: f64,
    /// `dV/dt` against `½∫ tr(h) η`.
    pub volume_trace: DerivativeCheck,
    /// `dV/dt` against `(n/2)∫ h(u, u) η`.
    pub volume_directional: DerivativeCheck,
    /// Largest nodewise mismatch of `dη/dt` against `(g^{ij} − (n/2)u^i u^j) h_ij η`,
    /// relative to the largest `|dη/dt|`.
    pub density_residual: f64,
    /// Largest mismatch of `dG^i_k/dt` against
    /// `½(∇_k h^i_0 + ∇_0 h^i_k − ∇^i h_0k) − 2C^i_ks G'^s`, relative to the
    /// largest `|dG^i_k/dt|`.
    pub connection_residual: f64,
    /// For conformal paths: `dI/dt` against `∫ H(u, u) tr(h) η` (`c = 0`).
    pub functional: Option<DerivativeCheck>,
}

impl VariationReport {
    pub fn worst(&self) -> f64 {
        let mut w = self
            .volume_trace
            .residual
            .max(self.volume_directional.residual)
            .max(self.density_residual)
            .max(self.connection_residual);
        if let Some(f) = &self.functional {
            w = w.max(f.residual);
        }
        w
    }
}

fn member_measure(path: &MetricPath, t: f64, grid: &BaseGrid, fiber: &FiberGrid) -> Result<MeasureField> {
    let m = path.member(t);
    MeasureField::from_structure(&m, grid, fiber).map_err(|e| match e {
        e if e.is_numerical() => FinslerError::InvalidFamily { t, reason: e.to_string() },
        e => e,
    })
}

/// Check the first-variation formulas along `path` at `t = 0` by centered
/// differences with step `step`, on a surface grid. Connection residuals use
/// `samples` quasi-random points.
pub fn variation_residuals(
    path: &MetricPath,
    grid: &BaseGrid,
    fiber: &FiberGrid,
    step: f64,
    samples: usize,
) -> Result<VariationReport> {
    let fs = path.base.as_ref();
    if fs.dim() != 2 {
        return Err(FinslerError::UnsupportedDimension(fs.dim()));
    }
    path.generator.check(2)?;
    let gen = &path.generator;
    let m0 = member_measure(path, 0.0, grid, fiber)?;
    let mp = member_measure(path, step, grid, fiber)?;
    let mm = member_measure(path, -step, grid, fiber)?;
    let hv = map_nodes(grid, fiber, |x, y| gen.h_at(fs, x, y))?;
    let h = sym_fields(&hv, grid, fiber);
    let gi = grid::inverse(&m0.metric);
    let tr = grid::trace(&gi, &h);
    // h(u, u) with u = r e(θ)
    let fc = FiberCalculus::new(fiber);
    let (c, s) = (&fc.cos, &fc.sin);
    let r2 = m0.radius.mapv(|r| r * r);
    let huu = &(&(&h[0] * c) * c + &(&(&h[1] * c) * s) * 2.0 + &(&h[2] * s) * s) * &r2;

    let dv = (mp.volume() - mm.volume()) / (2.0 * step);
    let floor = 1e-9 * m0.volume();
    let v_tr = 0.5 * sm_integrate(&tr, &m0)?;
    let v_dir = sm_integrate(&huu, &m0)?;
    let volume_trace = DerivativeCheck {
        finite_difference: dv,
        predicted: v_tr,
        residual: rel(dv, v_tr, floor),
    };
    let volume_directional = DerivativeCheck {
        finite_difference: dv,
        predicted: v_dir,
        residual: rel(dv, v_dir, floor),
    };

    let drho = (&mp.rho - &mm.rho) / (2.0 * step);
    let predicted = &(&tr - &huu) * &m0.rho;
    let scale = max_abs(drho.iter().copied()).max(max_abs(predicted.iter().copied())).max(1e-12);
    let density_residual = max_abs((&drho - &predicted).into_iter()) / scale;

    let connection_residual = connection_check(path, step, samples)?;

    let functional = match gen {
        Generator::Conformal { .. } => {
            let src = CurvatureSource::default();
            let ip = functional_i(&path.member(step), &CFun::Zero, grid, fiber, src)?;
            let im = functional_i(&path.member(-step), &CFun::Zero, grid, fiber, src)?;
            let fd = (ip.i - im.i) / (2.0 * step);
            let (_, fields) = crate::measure::curvature_fields(fs, grid, fiber, src)?;
            let pred = sm_integrate(&(&fields.ricci_directional * &tr), &m0)?;
            Some(DerivativeCheck {
                finite_difference: fd,
                predicted: pred,
                residual: rel(fd, pred, floor),
            })
        }
        Generator::Randers { .. } => None,
    };
    Ok(VariationReport {
        step,
        volume_trace,
        volume_directional,
        density_residual,
        connection_residual,
        functional,
    })
}

fn connection_check(path: &MetricPath, step: f64, samples: usize) -> Result<f64> {
    let fs = path.base.as_ref();
    let n = fs.dim();
    let chart = fs.chart();
    let (plus, minus) = (path.member(step), path.member(-step));
    let (mut worst, mut scale) = (0.0f64, 1e-12f64);
    for idx in 0..samples {
        let (x, y) = sample_point(&chart, n, idx);
        let fd_nl: Vec<f64> = nonlinear_connection(&plus, &x, &y)?
            .iter()
            .zip(nonlinear_connection(&minus, &x, &y)?)
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect();
        let fd_spray: Vec<f64> = spray(&plus, &x, &y)?
            .iter()
            .zip(spray(&minus, &x, &y)?)
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect();
        let e = node_eval(fs, Some(&path.generator), &x, &y)?;
        let f = &e.frame;
        let dh = |a: usize, b: usize, l: usize| e.dh[(a * n + b) * n + l];
        for i in 0..n {
            for k in 0..n {
                let mut v = 0.0;
                for a in 0..n {
                    let gia = f.ginv(i, a);
                    for b in 0..n {
                        // ∇_k h^i_0 = g^{ia} ∇_k h_ab y^b, ∇^i h_0k = g^{ia} ∇_a h_bk y^b
                        v += 0.5 * gia * (dh(a, b, k) * y[b] + dh(a, k, b) * y[b] - dh(b, k, a) * y[b]);
                    }
                }
                for s_ in 0..n {
                    let mut c_up = 0.0;
                    for a in 0..n {
                        c_up += f.ginv(i, a) * f.c(a, k, s_);
                    }
                    v -= 2.0 * c_up * fd_spray[s_];
                }
                worst = worst.max((fd_nl[i * n + k] - v).abs());
                scale = scale.max(fd_nl[i * n + k].abs());
            }
        }
    }
    Ok(worst / scale)
}

/// Default test direction: a smooth trigonometric field on the 2-torus.
pub fn trig_vector_field(a: f64, b: f64) -> BaseField {
    vec![
        TrigSeries::cosine(a, &[0.0, 1.0], 0.4).plus(TrigSeries::constant(0.1)),
        TrigSeries::cosine(b, &[1.0, 1.0], 0.0),
    ]
}
