//! Berwald hh-curvature and the Ricci-type scalars built from it.
//!
//! `H^i_jkl = δ_k G^i_jl − δ_l G^i_jk + G^m_jl G^i_mk − G^m_jk G^i_ml` is
//! stored as `[((i * n + j) * n + k) * n + l]`. The Ricci contraction pairs the
//! upper index with the third slot, `H_jl = ½(H^k_jkl + H^k_lkj)`, so that
//! `H_rs y^r y^s = Ric` and `H(u, u) = H^k_jkl u^j u^l`.

use serde::Serialize;

use crate::chart::{BaseMode, FiberGrid};
use crate::connections::{Pointwise, SprayJets};
use crate::error::Result;
use crate::jet::Jet;
use crate::structure::{FinslerStructure, SymTensor2};

/// All curvature quantities at one point of `TM∖0`.
#[derive(Debug, Clone, Serialize)]
pub struct CurvatureBundle {
    pub n: usize,
    pub hh: Vec<f64>,
    pub ricci: SymTensor2,
    pub akbar_zadeh_ricci: SymTensor2,
    pub ricci_directional: f64,
    pub h_tilde: f64,
    pub h_hat: f64,
}

impl CurvatureBundle {
    pub fn hh(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.hh[((i * n + j) * n + k) * n + l]
    }
}

fn hh_from_jets(s: &SprayJets) -> Vec<f64> {
    let n = s.n;
    let nl = s.connection_jets();
    let b = s.berwald_jets(&nl);
    let nlv: Vec<Vec<f64>> = nl.iter().map(|r| r.iter().map(Jet::value).collect()).collect();
    let bv: Vec<Vec<Vec<f64>>> = b
        .iter()
        .map(|m| m.iter().map(|r| r.iter().map(Jet::value).collect()).collect())
        .collect();
    // δ_k G^i_jl
    let mut delta = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                let c = &b[i][j][l];
                for k in 0..n {
                    let mut v = c.d(k).value();
                    for m in 0..n {
                        v -= nlv[m][k] * c.d(n + m).value();
                    }
                    delta[((i * n + j) * n + l) * n + k] = v;
                }
            }
        }
    }
    let mut hh = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut v = delta[((i * n + j) * n + l) * n + k] - delta[((i * n + j) * n + k) * n + l];
                    for m in 0..n {
                        v += bv[m][j][l] * bv[i][m][k] - bv[m][j][k] * bv[i][m][l];
                    }
                    hh[((i * n + j) * n + k) * n + l] = v;
                }
            }
        }
    }
    hh
}

fn ricci_contraction(hh: &[f64], n: usize) -> SymTensor2 {
    let at = |i: usize, j: usize, k: usize, l: usize| hh[((i * n + j) * n + k) * n + l];
    SymTensor2::from_fn(n, |j, l| {
        let mut v = 0.0;
        for k in 0..n {
            v += at(k, j, k, l) + at(k, l, k, j);
        }
        0.5 * v
    })
}

fn akbar_zadeh(ric: &Jet, n: usize) -> SymTensor2 {
    SymTensor2::from_fn(n, |i, j| 0.5 * ric.d(n + i).d(n + j).value())
}

fn trace(t: &SymTensor2, ginv: &[Vec<Jet>]) -> f64 {
    let n = t.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += ginv[i][j].value() * t.get(i, j);
        }
    }
    acc
}

/// `‖T − (tr_g T / n) g‖_g` using `g⁻¹` on both indices.
pub fn tracefree_norm(t: &SymTensor2, g: &SymTensor2) -> f64 {
    let n = g.dim();
    let gi = g.inverse().expect("metric is invertible");
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += gi[i * n + j] * t.get(i, j);
        }
    }
    let e = SymTensor2::from_fn(n, |i, j| t.get(i, j) - tr / n as f64 * g.get(i, j));
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    acc += gi[i * n + k] * gi[j * n + l] * e.get(i, j) * e.get(k, l);
                }
            }
        }
    }
    acc.max(0.0).sqrt()
}

impl Pointwise<'_> {
    pub fn hh_curvature(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let s = self.jets(x, y, 5, 2)?;
        Ok(hh_from_jets(&s))
    }

    /// `(H_ij, H̃_ij)`.
    pub fn ricci_tensors(&self, x: &[f64], y: &[f64]) -> Result<(SymTensor2, SymTensor2)> {
        let s = self.jets(x, y, 6, 2)?;
        let hh = hh_from_jets(&s);
        Ok((ricci_contraction(&hh, s.n), akbar_zadeh(&s.ricci_jet(), s.n)))
    }

    /// `H(u, u) = Ric(x, y) / F²`.
    pub fn ricci_directional(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let s = self.jets(x, y, 4, 2)?;
        Ok(s.ricci_jet().value() / s.l.value())
    }

    /// `(H̃, Ĥ = H̃ − c(x) H(u, u))`.
    pub fn hat_scalars(&self, x: &[f64], y: &[f64], c: &dyn Fn(&[f64]) -> f64) -> Result<(f64, f64)> {
        let s = self.jets(x, y, 6, 2)?;
        let ric = s.ricci_jet();
        let ht = trace(&akbar_zadeh(&ric, s.n), &s.ginv);
        let huu = ric.value() / s.l.value();
        Ok((ht, ht - c(x) * huu))
    }

    pub fn curvature_bundle(&self, x: &[f64], y: &[f64], c: &dyn Fn(&[f64]) -> f64) -> Result<CurvatureBundle> {
        let s = self.jets(x, y, 6, 2)?;
        let hh = hh_from_jets(&s);
        let ric = s.ricci_jet();
        let az = akbar_zadeh(&ric, s.n);
        let ht = trace(&az, &s.ginv);
        let huu = ric.value() / s.l.value();
        Ok(CurvatureBundle {
            n: s.n,
            ricci: ricci_contraction(&hh, s.n),
            hh,
            akbar_zadeh_ricci: az,
            ricci_directional: huu,
            h_tilde: ht,
            h_hat: ht - c(x) * huu,
        })
    }

    /// Largest metric-normalized trace-free part of `H̃_ij` over the fiber
    /// directions at `x`.
    pub fn gem_residual(&self, x: &[f64], fiber: &FiberGrid) -> Result<f64> {
        let n = self.fs.dim();
        let mut worst = 0.0f64;
        for y in fiber_directions(n, fiber.count) {
            let s = self.jets(x, &y, 6, 2)?;
            let az = akbar_zadeh(&s.ricci_jet(), n);
            worst = worst.max(tracefree_norm(&az, &s.metric()));
        }
        Ok(worst)
    }
}

/// `count` unit directions: angles midway between the fiber grid angles for
/// `n = 2` (so coordinate axes are avoided), a Fibonacci lattice on the
/// sphere for `n = 3`.
pub fn fiber_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        2 => (0..count)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
    }
}

pub fn hh_curvature(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Pointwise::new(fs).hh_curvature(x, y)
}

pub fn ricci_tensors(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<(SymTensor2, SymTensor2)> {
    Pointwise::new(fs).ricci_tensors(x, y)
}

pub fn ricci_directional(fs: &dyn FinslerStructure, x: &[f64], y: &[f64]) -> Result<f64> {
    Pointwise::new(fs).ricci_directional(x, y)
}

pub fn hat_scalars(fs: &dyn FinslerStructure, x: &[f64], y: &[f64], c: &dyn Fn(&[f64]) -> f64) -> Result<(f64, f64)> {
    Pointwise::new(fs).hat_scalars(x, y, c)
}

pub fn gem_residual(fs: &dyn FinslerStructure, x: &[f64], fiber: &FiberGrid) -> Result<f64> {
    Pointwise::new(fs).gem_residual(x, fiber)
}

/// `H(u, u)` with base derivatives taken by finite differences of step
/// `max(1e-3, spacing)`.
pub fn ricci_directional_fd(fs: &dyn FinslerStructure, x: &[f64], y: &[f64], spacing: f64) -> Result<f64> {
    Pointwise::with_mode(fs, BaseMode::finite_difference_for(spacing)).ricci_directional(x, y)
}
