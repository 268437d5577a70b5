//! Geodesic spray, nonlinear connection, Berwald and Cartan (horizontal)
//! connection coefficients, horizontal covariant derivatives and a geodesic
//! integrator.
//!
//! Index conventions: `G^i_j` is stored row-major as `[i * n + j]`,
//! `G^i_jk` as `[(i * n + j) * n + k]`.

use serde::Serialize;

use crate::chart::{structure_jet, BaseMode};
use crate::error::{FinslerError, Result};
use crate::jet::{Jet, JetSpace};
use crate::structure::{check_vector, ensure_positive, inverse_jets, metric_jets, metric_values, FinslerStructure, SymTensor2};

/// Jets of the metric, its inverse and the spray at one point of `TM∖0`.
pub(crate) struct SprayJets {
    pub n: usize,
    pub space: &'static JetSpace,
    pub y: Vec<Jet>,
    pub l: Jet,
    pub g: Vec<Vec<Jet>>,
    pub ginv: Vec<Vec<Jet>>,
    pub spray: Vec<Jet>,
}

impl SprayJets {
    /// Builds jets known to total order `total` and base order `base` for
    /// `F²`; the spray is then known to `(total − 2, base − 1)`.
    pub fn new(fs: &dyn FinslerStructure, x: &[f64], y: &[f64], total: usize, base: usize, mode: BaseMode) -> Result<Self> {
        check_vector(fs, x, y)?;
        let n = fs.dim();
        let l = structure_jet(fs, x, y, total, base, mode, true)?;
        let space = l.space();
        let g = metric_jets(&l, n);
        ensure_positive(&metric_values(&g), x, y)?;
        let ginv = inverse_jets(&g);
        let yj: Vec<Jet> = (0..n).map(|i| space.variable(n + i, y[i])).collect();
        let rhs: Vec<Jet> = (0..n)
            .map(|h| {
                let lyh = l.d(n + h);
                let mut acc = -l.d(h);
                for (j, yv) in yj.iter().enumerate() {
                    acc = acc + &(lyh.d(j) * yv);
                }
                acc
            })
            .collect();
        let spray = (0..n)
            .map(|i| {
                let mut acc = ginv[i][0].clone() * &rhs[0];
                for h in 1..n {
                    acc = acc + &(ginv[i][h].clone() * &rhs[h]);
                }
                acc * 0.25
            })
            .collect();
        Ok(SprayJets {
            n,
            space,
            y: yj,
            l,
            g,
            ginv,
            spray,
        })
    }

    pub fn metric(&self) -> SymTensor2 {
        metric_values(&self.g)
    }

    /// `∂G^i/∂y^j` as jets, `[i][j]`.
    pub fn connection_jets(&self) -> Vec<Vec<Jet>> {
        let n = self.n;
        self.spray
            .iter()
            .map(|gi| (0..n).map(|j| gi.d(n + j)).collect())
            .collect()
    }

    /// `G^i_jk` as jets, `[i][j][k]`.
    pub fn berwald_jets(&self, nl: &[Vec<Jet>]) -> Vec<Vec<Vec<Jet>>> {
        let n = self.n;
        nl.iter()
            .map(|row| {
                (0..n)
                    .map(|j| (0..n).map(|k| if k < j { row[k].d(n + j) } else { row[j].d(n + k) }).collect())
                    .collect()
            })
            .collect()
    }

    /// The Ricci scalar `Ric = R^k_k` (2-homogeneous in `y`) as a jet known
    /// to `(total − 4, base − 2)`.
    pub fn ricci_jet(&self) -> Jet {
        let n = self.n;
        let nl = self.connection_jets();
        let mut ric = self.space.constant(0.0);
        for i in 0..n {
            let gi = &self.spray[i];
            // 2 ∂G^i/∂x^i
            ric = ric + &(gi.d(i) * 2.0);
            // − y^j ∂²G^i/∂x^j∂y^i
            let gyi = &nl[i][i];
            for j in 0..n {
                ric = ric - &(gyi.d(j) * &self.y[j]);
            }
            for j in 0..n {
                // 2 G^j ∂²G^i/∂y^j∂y^i − G^i_j G^j_i
                ric = ric + &(self.spray[j].clone() * &gyi.d(n + j) * 2.0);
                ric = ric - &(nl[i][j].clone() * &nl[j][i]);
            }
        }
        ric
    }
}

/// Pointwise evaluation of connection quantities with a chosen base mode.
#[derive(Debug, Clone, Copy)]
pub struct Pointwise<'a> {
    pub fs: &'a dyn FinslerStructure,
    pub mode: BaseMode,
}

/// Spray coefficients and their fiber derivatives at `(x, y)`.
#[derive(Debug, Clone, Serialize)]
pub struct SprayData {
    pub n: usize,
    pub spray: Vec<f64>,
    pub connection: Vec<f64>,
    pub berwald: Vec<f64>,
}

impl SprayData {
    pub fn connection(&self, i: usize, j: usize) -> f64 {
        self.connection[i * self.n + j]
    }

    pub fn berwald(&self, i: usize, j: usize, k: usize) -> f64 {
        self.berwald[(i * self.n + j) * self.n + k]
    }
}

/// Horizontal coefficients `Γ^i_jk` of the Cartan connection.
#[derive(Debug, Clone, Serialize)]
pub struct CartanCoeffs {
    pub n: usize,
    pub gamma: Vec<f64>,
}

impl CartanCoeffs {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma[(i * self.n + j) * self.n + k]
    }
}

/// Cartan-connection data at a point: `g`, `g⁻¹`, `C_ijk`, `G^i_j` and
/// `Γ^i_jk` values, shared by the covariant-derivative routines.
#[derive(Debug, Clone)]
pub struct HorizontalFrame {
    pub n: usize,
    pub g: Vec<f64>,
    pub ginv: Vec<f64>,
    pub cartan: Vec<f64>,
    pub connection: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl HorizontalFrame {
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n + j]
    }
    pub fn ginv(&self, i: usize, j: usize) -> f64 {
        self.ginv[i * self.n + j]
    }
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.cartan[(i * self.n + j) * self.n + k]
    }
    pub fn nl(&self, i: usize, j: usize) -> f64 {
        self.connection[i * self.n + j]
    }
    pub fn gamma(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma[(i * self.n + j) * self.n + k]
    }
}

fn values2(m: &[Vec<Jet>]) -> Vec<f64> {
    m.iter().flat_map(|r| r.iter().map(|v| v.value())).collect()
}

impl<'a> Pointwise<'a> {
    pub fn new(fs: &'a dyn FinslerStructure) -> Self {
        Pointwise {
            fs,
            mode: BaseMode::Analytic,
        }
    }

    pub fn with_mode(fs: &'a dyn FinslerStructure, mode: BaseMode) -> Self {
        Pointwise { fs, mode }
    }

    pub(crate) fn jets(&self, x: &[f64], y: &[f64], total: usize, base: usize) -> Result<SprayJets> {
        SprayJets::new(self.fs, x, y, total, base, self.mode)
    }

    pub fn spray(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let s = self.jets(x, y, 2, 1)?;
        Ok(s.spray.iter().map(|v| v.value()).collect())
    }

    pub fn nonlinear_connection(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let s = self.jets(x, y, 3, 1)?;
        Ok(values2(&s.connection_jets()))
    }

    pub fn berwald_coeffs(&self, x: &[f64], y: &[f64]) -> Result<SprayData> {
        let s = self.jets(x, y, 4, 1)?;
        let nl = s.connection_jets();
        let b = s.berwald_jets(&nl);
        Ok(SprayData {
            n: s.n,
            spray: s.spray.iter().map(|v| v.value()).collect(),
            connection: values2(&nl),
            berwald: b.iter().flat_map(|m| m.iter().flat_map(|r| r.iter().map(|v| v.value()))).collect(),
        })
    }

    /// `g`, `C`, `G^i_j` and `Γ^i_jk` at `(x, y)`.
    pub fn horizontal_frame(&self, x: &[f64], y: &[f64]) -> Result<HorizontalFrame> {
        let s = self.jets(x, y, 3, 1)?;
        Ok(frame_from_jets(&s))
    }

    pub fn cartan_hcoeffs(&self, x: &[f64], y: &[f64]) -> Result<CartanCoeffs> {
        let f = self.horizontal_frame(x, y)?;
        Ok(CartanCoeffs { n: f.n, gamma: f.gamma })
    }
}

pub(crate) fn frame_from_jets(s: &SprayJets) -> HorizontalFrame {
    let n = s.n;
    let nl = s.connection_jets();
    let g = values2(&s.g);
    let ginv = values2(&s.ginv);
    let dg = |m: usize, j: usize, k: usize| s.g[m][j].d(k).value();
    let mut cartan = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                cartan[(i * n + j) * n + k] = 0.5 * s.g[i][j].d(n + k).value();
            }
        }
    }
    let c = |i: usize, j: usize, k: usize| cartan[(i * n + j) * n + k];
    let nlv = values2(&nl);
    let gs = |s_: usize, k: usize| nlv[s_ * n + k];
    let mut gamma = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    let mut low = 0.5 * (dg(m, j, k) + dg(m, k, j) - dg(j, k, m));
                    for t in 0..n {
                        low -= c(m, j, t) * gs(t, k) + c(m, k, t) * gs(t, j) - c(j, k, t) * gs(t, m);
                    }
                    acc += ginv[i * n + m] * low;
                }
                gamma[(i * n + j) * n + k] = acc;
            }
        }
    }
    HorizontalFrame {
        n,
        g,
        ginv,
        cartan,
        connection: nlv,
        gamma,
    }
}

/// `G^i(x, y)`.
pub fn spray(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Pointwise::new(fs).spray(x, y)
}

/// `G^i_j = ∂G^i/∂y^j`, row-major.
pub fn nonlinear_connection(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Pointwise::new(fs).nonlinear_connection(x, y)
}

/// `G^i`, `G^i_j` and `G^i_jk = ∂G^i_j/∂y^k`.
pub fn berwald_coeffs(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<SprayData> {
    Pointwise::new(fs).berwald_coeffs(x, y)
}

/// Horizontal Cartan coefficients
/// `Γ^i_jk = γ^i_jk − g^{im}(C_mjs G^s_k + C_mks G^s_j − C_jks G^s_m)`.
pub fn cartan_hcoeffs(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<CartanCoeffs> {
    Pointwise::new(fs).cartan_hcoeffs(x, y)
}

type FieldFn<'a> = dyn Fn(&[Jet], &[Jet]) -> Vec<Jet> + Sync + 'a;

/// A tensor field on `TM∖0` given by a jet-valued expression, with one
/// optional contravariant index and up to two covariant indices.
/// Components are row-major with the contravariant index first.
pub struct JetField<'a> {
    pub upper: usize,
    pub lower: usize,
    /// Number of fiber derivatives of `F` the expression takes.
    pub fiber_order: usize,
    pub eval: Box<FieldFn<'a>>,
}

impl<'a> JetField<'a> {
    /// The structure `F` itself, a scalar.
    pub fn finsler(fs: &'a dyn FinslerStructure) -> Self {
        JetField {
            upper: 0,
            lower: 0,
            fiber_order: 0,
            eval: Box::new(move |x, y| vec![fs.eval_jet(x, y)]),
        }
    }

    /// The fundamental tensor `g_ij`.
    pub fn metric(fs: &'a dyn FinslerStructure) -> Self {
        let n = fs.dim();
        JetField {
            upper: 0,
            lower: 2,
            fiber_order: 2,
            eval: Box::new(move |x, y| {
                let f = fs.eval_jet(x, y);
                let l = f.clone() * &f;
                metric_jets(&l, n).into_iter().flatten().collect()
            }),
        }
    }
}

/// Horizontal Cartan covariant derivative `∇_l T` of `field` at `(x, y)`;
/// the derivative index is appended last.
pub fn h_cov_deriv(field: &JetField, fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if field.upper > 1 || field.upper + field.lower > 3 {
        return Err(FinslerError::UnsupportedValence(field.upper, field.lower));
    }
    if !fs.analytic_base_partials() {
        return Err(FinslerError::GridModeBaseDerivative);
    }
    check_vector(fs, x, y)?;
    let n = fs.dim();
    let frame = Pointwise::new(fs).horizontal_frame(x, y)?;
    let total = field.fiber_order + 1;
    let space = JetSpace::get(2 * n, n, total, 1);
    let xs: Vec<Jet> = (0..n).map(|i| space.variable(i, x[i])).collect();
    let ys: Vec<Jet> = (0..n).map(|i| space.variable(n + i, y[i])).collect();
    let comps = (field.eval)(&xs, &ys);
    let rank = field.upper + field.lower;
    let count = n.pow(rank as u32);
    if comps.len() != count {
        return Err(FinslerError::InvalidParameter(format!(
            "field returned {} components, expected {count}",
            comps.len()
        )));
    }
    Ok(cov_deriv_values(&comps, field.upper, rank, &frame))
}

/// `∇_l T` from jets of the components of `T` (known to at least first
/// order in both `x` and `y`), derivative index last.
pub(crate) fn cov_deriv_values(comps: &[Jet], upper: usize, rank: usize, frame: &HorizontalFrame) -> Vec<f64> {
    let n = frame.n;
    let count = comps.len();
    let val: Vec<f64> = comps.iter().map(|c| c.value()).collect();
    let mut out = vec![0.0; count * n];
    let decode = |mut c: usize| -> Vec<usize> {
        let mut idx = vec![0; rank];
        for r in (0..rank).rev() {
            idx[r] = c % n;
            c /= n;
        }
        idx
    };
    let encode = |idx: &[usize]| idx.iter().fold(0, |a, &i| a * n + i);
    for c in 0..count {
        let idx = decode(c);
        for l in 0..n {
            // δ_l T = ∂_l T − G^m_l ∂T/∂y^m
            let mut acc = comps[c].d(l).value();
            for m in 0..n {
                acc -= frame.nl(m, l) * comps[c].d(n + m).value();
            }
            for (slot, &i) in idx.iter().enumerate() {
                let mut j = idx.clone();
                for m in 0..n {
                    j[slot] = m;
                    if slot < upper {
                        acc += frame.gamma(i, m, l) * val[encode(&j)];
                    } else {
                        acc -= frame.gamma(m, i, l) * val[encode(&j)];
                    }
                }
            }
            out[c * n + l] = acc;
        }
    }
    out
}

/// `∇_0 T = y^l ∇_l T`.
pub fn h_cov_deriv_along(field: &JetField, fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = fs.dim();
    let d = h_cov_deriv(field, fs, x, y)?;
    Ok(d.chunks(n).map(|c| c.iter().zip(y).map(|(a, b)| a * b).sum()).collect())
}

/// Samples of a geodesic `ẍ^i + 2G^i(x, ẋ) = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct GeodesicPath {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// The path left the chart (or hit a degenerate point) and was cut short.
    pub truncated: bool,
}

/// Classical RK4 with fixed step `dt` up to time `t_end`.
pub fn geodesic_integrate(fs: &dyn FinslerStructure, x0: &[f64], y0: &[f64], t_end: f64, dt: f64) -> Result<GeodesicPath> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(FinslerError::InvalidParameter(format!("need dt > 0 and T ≥ 0, got dt = {dt}, T = {t_end}")));
    }
    check_vector(fs, x0, y0)?;
    let n = fs.dim();
    let chart = fs.chart();
    let rhs = |x: &[f64], v: &[f64]| -> Result<Vec<f64>> {
        let g = spray(fs, x, v)?;
        let mut out = v.to_vec();
        out.extend(g.iter().map(|gi| -2.0 * gi));
        Ok(out)
    };
    let steps = (t_end / dt).round() as usize;
    let mut path = GeodesicPath {
        t: vec![0.0],
        x: vec![x0.to_vec()],
        v: vec![y0.to_vec()],
        truncated: false,
    };
    let mut state: Vec<f64> = x0.iter().chain(y0).copied().collect();
    let axpy = |s: &[f64], k: &[f64], a: f64| -> Vec<f64> { s.iter().zip(k).map(|(u, w)| u + a * w).collect() };
    for step in 1..=steps {
        let attempt = (|| -> Result<Vec<f64>> {
            let k1 = rhs(&state[..n], &state[n..])?;
            let s2 = axpy(&state, &k1, 0.5 * dt);
            let k2 = rhs(&s2[..n], &s2[n..])?;
            let s3 = axpy(&state, &k2, 0.5 * dt);
            let k3 = rhs(&s3[..n], &s3[n..])?;
            let s4 = axpy(&state, &k3, dt);
            let k4 = rhs(&s4[..n], &s4[n..])?;
            Ok((0..2 * n)
                .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        })();
        match attempt {
            Ok(next) if chart.contains(&next[..n]) && next.iter().all(|v| v.is_finite()) => {
                state = next;
                path.t.push(step as f64 * dt);
                path.x.push(state[..n].to_vec());
                path.v.push(state[n..].to_vec());
            }
            Ok(_) | Err(FinslerError::SingularMetric { .. }) | Err(FinslerError::ZeroVector) => {
                path.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(path)
}
