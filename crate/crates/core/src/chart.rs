//! Grids on the base and the fiber, base differentiation of sampled fields,
//! and the jet engine producing exact fiber derivatives of `F` and `F²`.

use std::collections::HashMap;
use std::f64::consts::PI;

use ndarray::{Array, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{FinslerError, Result};
use crate::jet::{Jet, JetSpace};
use crate::numerics::{periodic_fd, SpectralAxis, D1_WEIGHTS, D2_WEIGHTS};
use crate::structure::{check_vector, FinslerStructure, Mode};

/// Uniform grid on the base chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseGrid {
    pub counts: Vec<usize>,
    pub lengths: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl BaseGrid {
    pub fn new(counts: Vec<usize>, lengths: Vec<f64>) -> Result<Self> {
        let n = counts.len();
        if !(2..=3).contains(&n) || lengths.len() != n {
            return Err(FinslerError::InvalidGrid(format!(
                "base dimension must be 2 or 3 with one length per axis (got {n} counts, {} lengths)",
                lengths.len()
            )));
        }
        if let Some(c) = counts.iter().find(|&&c| c < 8) {
            return Err(FinslerError::InvalidGrid(format!("at least 8 nodes per axis required, got {c}")));
        }
        if let Some(l) = lengths.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(FinslerError::InvalidGrid(format!("axis lengths must be positive, got {l}")));
        }
        Ok(BaseGrid {
            periodic: vec![true; n],
            counts,
            lengths,
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.counts[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        i as f64 * self.spacing(axis)
    }

    /// Coordinates of axis `axis`.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis]).map(|i| self.coord(axis, i)).collect()
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Area (or volume) element `Π h_a`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }
}

/// Uniform angles `θ_k = 2πk/N` on the unit circle of the fiber.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiberGrid {
    pub count: usize,
}

impl FiberGrid {
    pub fn new(count: usize) -> Result<Self> {
        if count < 16 || count % 2 == 1 {
            return Err(FinslerError::InvalidGrid(format!(
                "fiber grid needs an even node count ≥ 16, got {count}"
            )));
        }
        Ok(FiberGrid { count })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.count as f64
    }

    pub fn theta(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.theta(k)).collect()
    }
}

/// Base and fiber grids for an `n`-dimensional periodic box of side `length`.
pub fn build_grid(n: usize, nodes: usize, length: f64, fiber_nodes: usize) -> Result<(BaseGrid, FiberGrid)> {
    if !(2..=3).contains(&n) {
        return Err(FinslerError::InvalidGrid(format!("dimension must be 2 or 3, got {n}")));
    }
    let base = BaseGrid::new(vec![nodes; n], vec![length; n])?;
    let fiber = FiberGrid::new(fiber_nodes)?;
    Ok((base, fiber))
}

/// Base differentiation scheme for sampled fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivMode {
    /// 4th-order central differences on periodic stencils.
    #[default]
    FiniteDifference,
    /// Trigonometric-interpolation (FFT) derivatives.
    Spectral,
}

/// Derivative of `order` ∈ {1, 2} along base axis `axis` of a field whose
/// leading axes are the base grid axes.
pub fn base_derivative<D: Dimension>(
    field: &Array<f64, D>,
    grid: &BaseGrid,
    axis: usize,
    order: usize,
    mode: DerivMode,
) -> Result<Array<f64, D>> {
    if axis >= grid.dim() {
        return Err(FinslerError::InvalidParameter(format!("axis {axis} out of range")));
    }
    if !(1..=2).contains(&order) {
        return Err(FinslerError::OrderOutOfBounds(format!("base derivative order {order} (allowed 1, 2)")));
    }
    if field.ndim() < grid.dim() || field.shape()[axis] != grid.counts[axis] {
        return Err(FinslerError::GridMismatch(format!(
            "field shape {:?} does not match base grid {:?}",
            field.shape(),
            grid.counts
        )));
    }
    if !grid.periodic[axis] {
        return Err(FinslerError::NonPeriodicAxis { axis });
    }
    Ok(match mode {
        DerivMode::FiniteDifference => periodic_fd(field, axis, order, grid.spacing(axis)),
        DerivMode::Spectral => SpectralAxis::new(grid.counts[axis], grid.lengths[axis]).differentiate(field, axis, order),
    })
}

/// A mixed partial `∂^{k_x}_x ∂^{k_y}_y` of `F` (or `F²`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetRequest {
    kx: Vec<u8>,
    ky: Vec<u8>,
    squared: bool,
}

impl JetRequest {
    pub const MAX_BASE: usize = 2;
    pub const MAX_FIBER: usize = 4;
    pub const MAX_TOTAL: usize = 5;

    pub fn new(kx: &[u8], ky: &[u8], squared: bool) -> Result<Self> {
        let bx: usize = kx.iter().map(|&v| v as usize).sum();
        let by: usize = ky.iter().map(|&v| v as usize).sum();
        if bx > Self::MAX_BASE || by > Self::MAX_FIBER || bx + by > Self::MAX_TOTAL {
            return Err(FinslerError::OrderOutOfBounds(format!(
                "base order {bx} (max {}), fiber order {by} (max {}), total {} (max {})",
                Self::MAX_BASE,
                Self::MAX_FIBER,
                bx + by,
                Self::MAX_TOTAL
            )));
        }
        if kx.len() != ky.len() {
            return Err(FinslerError::InvalidParameter("k_x and k_y must have the same length".into()));
        }
        Ok(JetRequest {
            kx: kx.to_vec(),
            ky: ky.to_vec(),
            squared,
        })
    }

    /// `∂^{k_y} F²` with no base derivatives.
    pub fn fiber(ky: &[u8]) -> Result<Self> {
        Self::new(&vec![0; ky.len()], ky, true)
    }

    fn orders(&self) -> (usize, usize) {
        let bx: usize = self.kx.iter().map(|&v| v as usize).sum();
        let by: usize = self.ky.iter().map(|&v| v as usize).sum();
        (bx + by, bx)
    }
}

/// How base (`x`) derivatives of `F` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseMode {
    /// Differentiate the closed form; structures without analytic partials
    /// fall back to finite differences with step `1e-3`.
    Analytic,
    /// 4th-order central differences with the given step.
    FiniteDifference { step: f64 },
}

impl Default for BaseMode {
    fn default() -> Self {
        BaseMode::Analytic
    }
}

impl BaseMode {
    /// FD mode with step `max(1e-3, spacing)`.
    pub fn finite_difference_for(spacing: f64) -> Self {
        BaseMode::FiniteDifference { step: spacing.max(1e-3) }
    }
}

const DEFAULT_FD_STEP: f64 = 1e-3;

/// Jet of `F` (or `F²`) at `(x, y)` in `2n` variables, first the base
/// coordinates then the fiber coordinates, known to total order `total` and
/// base order `base`.
pub fn structure_jet(
    fs: &dyn FinslerStructure,
    x: &[f64],
    y: &[f64],
    total: usize,
    base: usize,
    mode: BaseMode,
    squared: bool,
) -> Result<Jet> {
    check_vector(fs, x, y)?;
    let n = fs.dim();
    let base = base.min(total);
    let step = match mode {
        BaseMode::Analytic if base == 0 || fs.analytic_base_partials() => None,
        BaseMode::Analytic => Some(DEFAULT_FD_STEP),
        BaseMode::FiniteDifference { step } => Some(step),
    };
    if base > 0 && fs.mode() == Mode::Grid {
        return Err(FinslerError::GridModeBaseDerivative);
    }
    let space = JetSpace::get(2 * n, n, total, base);
    let jet = match step {
        None => {
            let xs: Vec<Jet> = (0..n).map(|i| space.variable(i, x[i])).collect();
            let ys: Vec<Jet> = (0..n).map(|i| space.variable(n + i, y[i])).collect();
            fs.eval_jet(&xs, &ys)
        }
        Some(h) => {
            if base > 2 {
                return Err(FinslerError::OrderOutOfBounds(format!(
                    "finite-difference base derivatives support order ≤ 2, requested {base}"
                )));
            }
            assemble_fd(fs, x, y, total, base, h, space)?
        }
    };
    Ok(if squared {
        jet.clone() * &jet
    } else {
        jet
    })
}

/// Offsets (in units of the step) and weights approximating `∂^a` at the
/// origin; `a` has order ≤ 2.
fn stencil(a: &[u8]) -> Vec<(Vec<i32>, f64)> {
    let n = a.len();
    let nz: Vec<usize> = (0..n).filter(|&i| a[i] > 0).collect();
    let unit = |i: usize, k: i32| {
        let mut o = vec![0; n];
        o[i] = k;
        o
    };
    match nz.as_slice() {
        [] => vec![(vec![0; n], 1.0)],
        [i] if a[*i] == 1 => (0..5)
            .filter(|&k| D1_WEIGHTS[k] != 0.0)
            .map(|k| (unit(*i, k as i32 - 2), D1_WEIGHTS[k]))
            .collect(),
        [i] => (0..5).map(|k| (unit(*i, k as i32 - 2), D2_WEIGHTS[k])).collect(),
        [i, j] => {
            let mut out = Vec::new();
            for k in 0..5 {
                for l in 0..5 {
                    let w = D1_WEIGHTS[k] * D1_WEIGHTS[l];
                    if w != 0.0 {
                        let mut o = vec![0; n];
                        o[*i] = k as i32 - 2;
                        o[*j] = l as i32 - 2;
                        out.push((o, w));
                    }
                }
            }
            out
        }
        _ => unreachable!("stencils are built for order ≤ 2"),
    }
}

fn assemble_fd(
    fs: &dyn FinslerStructure,
    x: &[f64],
    y: &[f64],
    total: usize,
    base: usize,
    h: f64,
    space: &'static JetSpace,
) -> Result<Jet> {
    let n = fs.dim();
    let fiber = JetSpace::get(n, 0, total, 0);
    let mut cache: HashMap<Vec<i32>, Jet> = HashMap::new();
    let mut eval_at = |off: &[i32]| -> Jet {
        cache
            .entry(off.to_vec())
            .or_insert_with(|| {
                let xs: Vec<Jet> = (0..n).map(|i| fiber.constant(x[i] + off[i] as f64 * h)).collect();
                let ys: Vec<Jet> = (0..n).map(|i| fiber.variable(i, y[i])).collect();
                fs.eval_jet(&xs, &ys)
            })
            .clone()
    };

    let mut out = space.constant(0.0);
    let exps: Vec<Vec<u8>> = space.exponents().map(|e| e.to_vec()).collect();
    let mut by_base: HashMap<Vec<u8>, Vec<f64>> = HashMap::new();
    for e in &exps {
        let a = e[..n].to_vec();
        let b = &e[n..];
        let combo = by_base.entry(a.clone()).or_insert_with(|| {
            let order: usize = a.iter().map(|&v| v as usize).sum();
            let fact: f64 = a.iter().map(|&v| if v == 2 { 2.0 } else { 1.0 }).product();
            let mut acc = vec![0.0; fiber.len()];
            for (off, w) in stencil(&a) {
                let j = eval_at(&off);
                for (s, c) in acc.iter_mut().zip(j.coeffs()) {
                    *s += w * c;
                }
            }
            let scale = 1.0 / (h.powi(order as i32) * fact);
            acc.iter().map(|v| v * scale).collect()
        });
        let fi = fiber.index_of(b).expect("fiber monomial present");
        out.set_coeff(e, combo[fi]);
    }
    Ok(out.with_known(total, base))
}

/// A single mixed partial of `F` or `F²` at `(x, y)`.
pub fn fiber_jet(fs: &dyn FinslerStructure, x: &[f64], y: &[f64], req: &JetRequest, mode: BaseMode) -> Result<f64> {
    check_vector(fs, x, y)?;
    if req.kx.len() != fs.dim() {
        return Err(FinslerError::InvalidParameter(format!(
            "request has {} components for a {}-dimensional structure",
            req.kx.len(),
            fs.dim()
        )));
    }
    let (total, base) = req.orders();
    let jet = structure_jet(fs, x, y, total, base, mode, req.squared)?;
    let alpha: Vec<u8> = req.kx.iter().chain(req.ky.iter()).copied().collect();
    Ok(jet.partial(&alpha).expect("requested partial lies in the jet space"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;
    use crate::structure::{Chart, ClosedForm};
    use ndarray::{Array1, Array2};

    #[derive(Debug)]
    struct Wavy;

    impl ClosedForm for Wavy {
        fn dim(&self) -> usize {
            2
        }
        fn chart(&self) -> Chart {
            Chart::Torus {
                lengths: vec![2.0 * PI; 2],
            }
        }
        fn f<S: Scalar>(&self, x: &[S], y: &[S]) -> S {
            let a = (x[0].sin() * 0.3 + x[1].cos() * 0.2).exp();
            (y[0].square() + y[1].square() * 2.0).sqrt() * a
        }
    }

    #[derive(Debug)]
    struct NoPartials(Wavy);

    impl FinslerStructure for NoPartials {
        fn dim(&self) -> usize {
            2
        }
        fn chart(&self) -> Chart {
            ClosedForm::chart(&self.0)
        }
        fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
            self.0.f(x, y)
        }
        fn eval_jet(&self, x: &[Jet], y: &[Jet]) -> Jet {
            self.0.f(x, y)
        }
        fn analytic_base_partials(&self) -> bool {
            false
        }
    }

    #[test]
    fn grid_construction() {
        let (b, f) = build_grid(2, 32, 2.0 * PI, 64).unwrap();
        assert_eq!(b.spacing(0), 2.0 * PI / 32.0);
        assert_eq!(f.theta(3), 2.0 * PI * 3.0 / 64.0);
        assert!(build_grid(2, 8, 1.0, 16).is_ok());
        assert!(build_grid(2, 8, 1.0, 15).is_err());
        assert!(build_grid(2, 0, 1.0, 16).is_err());
        assert!(build_grid(2, 8, -1.0, 16).is_err());
        assert!(build_grid(4, 8, 1.0, 16).is_err());
    }

    #[test]
    fn derivative_of_sine() {
        let (b, _) = build_grid(2, 64, 2.0 * PI, 16).unwrap();
        let xs = Array1::from(b.axis_coords(0));
        let f = Array2::from_shape_fn((64, 64), |(i, _)| xs[i].sin());
        let max_err = |mode| {
            let d = base_derivative(&f, &b, 0, 1, mode).unwrap();
            d.indexed_iter()
                .map(|((i, _), v)| (v - xs[i].cos()).abs())
                .fold(0.0, f64::max)
        };
        assert!(max_err(DerivMode::Spectral) < 1e-6);
        // leading FD4 truncation term for sin: h^4/30
        let h = b.spacing(0);
        let err = max_err(DerivMode::FiniteDifference);
        assert!(err < 1.01 * h.powi(4) / 30.0, "{err}");
        let c = Array2::from_elem((64, 64), 3.0);
        let dc = base_derivative(&c, &b, 1, 2, DerivMode::FiniteDifference).unwrap();
        assert!(dc.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn fd_and_spectral_agree() {
        let (b, _) = build_grid(2, 64, 2.0 * PI, 16).unwrap();
        let xs = Array1::from(b.axis_coords(0));
        let f = Array2::from_shape_fn((64, 64), |(i, _)| (3.0 * xs[i]).sin());
        let fd = base_derivative(&f, &b, 0, 1, DerivMode::FiniteDifference).unwrap();
        let sp = base_derivative(&f, &b, 0, 1, DerivMode::Spectral).unwrap();
        let err = (&fd - &sp).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // the FD4 truncation error for sin(3x) at h = 2π/64 is 3^5 h^4 / 30 ≈ 7.5e-4
        assert!(err < 1e-3, "{err}");
        let fd2 = base_derivative(&f, &b, 0, 2, DerivMode::FiniteDifference).unwrap();
        let sp2 = base_derivative(&f, &b, 0, 2, DerivMode::Spectral).unwrap();
        let err2 = (&fd2 - &sp2).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err2 < 1e-2, "{err2}");
    }

    #[test]
    fn fd_converges_at_fourth_order() {
        let errs: Vec<f64> = [16usize, 32, 64]
            .iter()
            .map(|&n| {
                let (b, _) = build_grid(2, n, 2.0 * PI, 16).unwrap();
                let xs = Array1::from(b.axis_coords(1));
                let f = Array2::from_shape_fn((n, n), |(_, j)| (2.0 * xs[j]).cos());
                let d = base_derivative(&f, &b, 1, 2, DerivMode::FiniteDifference).unwrap();
                d.indexed_iter()
                    .map(|((_, j), v)| (v + 4.0 * (2.0 * xs[j]).cos()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 3.7, "observed order {order}");
        }
    }

    #[test]
    fn euclidean_second_fiber_derivative() {
        let r = JetRequest::fiber(&[2, 0]).unwrap();
        #[derive(Debug)]
        struct Flat;
        impl ClosedForm for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn chart(&self) -> Chart {
                Chart::Torus {
                    lengths: vec![1.0, 1.0],
                }
            }
            fn f<S: Scalar>(&self, _x: &[S], y: &[S]) -> S {
                (y[0].square() + y[1].square()).sqrt()
            }
        }
        let v = fiber_jet(&Flat, &[0.1, 0.2], &[0.3, -0.4], &r, BaseMode::Analytic).unwrap();
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn request_bounds() {
        assert!(JetRequest::new(&[3, 0], &[0, 0], false).is_err());
        assert!(JetRequest::new(&[0, 0], &[3, 2], false).is_err());
        assert!(JetRequest::new(&[1, 1], &[2, 2], false).is_err());
        assert!(JetRequest::new(&[1, 0], &[2, 2], false).is_ok());
    }

    #[test]
    fn finite_difference_base_partials_match_analytic() {
        let x = [0.4, 1.3];
        let y = [0.8, -0.5];
        let an = structure_jet(&Wavy, &x, &y, 4, 2, BaseMode::Analytic, true).unwrap();
        let fd = structure_jet(&Wavy, &x, &y, 4, 2, BaseMode::FiniteDifference { step: 1e-2 }, true).unwrap();
        let fallback = structure_jet(&NoPartials(Wavy), &x, &y, 4, 2, BaseMode::Analytic, true).unwrap();
        for e in an.space().exponents() {
            let a = an.partial(e).unwrap();
            let b = fd.partial(e).unwrap();
            let c = fallback.partial(e).unwrap();
            assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{e:?}: {a} vs {b}");
            assert!((a - c).abs() < 1e-7 * (1.0 + a.abs()), "{e:?}: {a} vs {c}");
        }
    }

    #[test]
    fn jets_are_deterministic() {
        let r = JetRequest::new(&[1, 0], &[1, 2], true).unwrap();
        let a = fiber_jet(&Wavy, &[0.1, 0.2], &[0.3, -0.4], &r, BaseMode::Analytic).unwrap();
        let b = fiber_jet(&Wavy, &[0.1, 0.2], &[0.3, -0.4], &r, BaseMode::Analytic).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
