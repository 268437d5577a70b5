//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] stores the Taylor coefficients `f^(α)(p) / α!` of a function at a
//! point `p`, for every multi-index `α` in a downward-closed monomial set
//!
//! ```text
//! S(K, Kb) = { α : |α| ≤ K, |α_base| ≤ Kb }
//! ```
//!
//! where the first `nbase` variables form the *base* group (chart coordinates
//! `x`) and the remaining ones the *fiber* group (`y`). Arithmetic in the
//! quotient ring by the monomials outside `S` is exact: products, quotients and
//! smooth elementary functions of jets reproduce the Taylor coefficients of the
//! composed function to machine precision, with no step-size error.
//!
//! Each jet also tracks the set it is *known* on. Differentiating in a fiber
//! variable lowers the known total order by one; differentiating in a base
//! variable lowers both the total and the base order. Coefficients outside the
//! known set are never read by later operations whose results are inside it.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Mutex, OnceLock};

/// Maximum number of jet variables (base + fiber) for `n ≤ 3`.
pub const MAX_VARS: usize = 6;

type Exponent = [u8; MAX_VARS];

/// Monomial tables for one truncation set.
pub struct JetSpace {
    nvars: usize,
    nbase: usize,
    max_total: usize,
    max_base: usize,
    exps: Vec<Exponent>,
    index: HashMap<Exponent, usize>,
    /// Product pairs `(i, j, out)` bucketed by `[total][base]` degree of `out`.
    pairs: Vec<Vec<Vec<(u16, u16, u16)>>>,
    /// Per variable: `(from, to, factor)` for `∂/∂v`.
    deriv: Vec<Vec<(u16, u16, f64)>>,
}

impl fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetSpace")
            .field("nvars", &self.nvars)
            .field("nbase", &self.nbase)
            .field("max_total", &self.max_total)
            .field("max_base", &self.max_base)
            .field("len", &self.exps.len())
            .finish()
    }
}

fn registry() -> &'static Mutex<HashMap<(usize, usize, usize, usize), &'static JetSpace>> {
    static SPACES: OnceLock<Mutex<HashMap<(usize, usize, usize, usize), &'static JetSpace>>> =
        OnceLock::new();
    SPACES.get_or_init(|| Mutex::new(HashMap::new()))
}

impl JetSpace {
    /// Shared space for `nvars` variables of which the first `nbase` are base
    /// variables, truncated at total order `max_total` and base order
    /// `max_base`. Spaces are built once and live for the whole process.
    pub fn get(nvars: usize, nbase: usize, max_total: usize, max_base: usize) -> &'static JetSpace {
        assert!(nvars <= MAX_VARS, "at most {MAX_VARS} jet variables");
        assert!(nbase <= nvars);
        let max_base = max_base.min(max_total);
        let key = (nvars, nbase, max_total, max_base);
        let mut map = registry().lock().expect("jet registry poisoned");
        if let Some(space) = map.get(&key) {
            return space;
        }
        let space: &'static JetSpace =
            Box::leak(Box::new(JetSpace::build(nvars, nbase, max_total, max_base)));
        map.insert(key, space);
        space
    }

    fn build(nvars: usize, nbase: usize, max_total: usize, max_base: usize) -> JetSpace {
        let mut exps = Vec::new();
        // graded order: by total degree, then lexicographic
        for total in 0..=max_total {
            let mut current = [0u8; MAX_VARS];
            enumerate(nvars, total, 0, &mut current, &mut |e| {
                let base: usize = e[..nbase].iter().map(|&v| v as usize).sum();
                if base <= max_base {
                    exps.push(*e);
                }
            });
        }
        assert!(exps.len() < u16::MAX as usize);
        let index: HashMap<Exponent, usize> =
            exps.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let degrees = |e: &Exponent| -> (usize, usize) {
            let t = e.iter().map(|&v| v as usize).sum();
            let b = e[..nbase].iter().map(|&v| v as usize).sum();
            (t, b)
        };

        let mut pairs = vec![vec![Vec::new(); max_base + 1]; max_total + 1];
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                let mut s = [0u8; MAX_VARS];
                for v in 0..nvars {
                    s[v] = a[v] + b[v];
                }
                if let Some(&o) = index.get(&s) {
                    let (t, bd) = degrees(&s);
                    pairs[t][bd].push((i as u16, j as u16, o as u16));
                }
            }
        }

        let mut deriv = vec![Vec::new(); nvars];
        for (v, table) in deriv.iter_mut().enumerate() {
            for (to, e) in exps.iter().enumerate() {
                let mut up = *e;
                up[v] += 1;
                if let Some(&from) = index.get(&up) {
                    table.push((from as u16, to as u16, up[v] as f64));
                }
            }
        }

        JetSpace {
            nvars,
            nbase,
            max_total,
            max_base,
            exps,
            index,
            pairs,
            deriv,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn nbase(&self) -> usize {
        self.nbase
    }

    pub fn max_total(&self) -> usize {
        self.max_total
    }

    pub fn max_base(&self) -> usize {
        self.max_base
    }

    /// Number of stored coefficients.
    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// Index of the coefficient for multi-index `alpha`, if it is stored.
    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        let mut e = [0u8; MAX_VARS];
        e[..alpha.len()].copy_from_slice(alpha);
        self.index.get(&e).copied()
    }

    pub fn exponents(&self) -> impl Iterator<Item = &[u8]> {
        self.exps.iter().map(move |e| &e[..self.nvars])
    }

    /// The constant jet `value`.
    pub fn constant(&'static self, value: f64) -> Jet {
        let mut c = vec![0.0; self.len()];
        c[0] = value;
        Jet {
            space: self,
            known: self.full(),
            c,
        }
    }

    /// The coordinate function of variable `var`, expanded at `value`.
    pub fn variable(&'static self, var: usize, value: f64) -> Jet {
        assert!(var < self.nvars);
        let mut jet = self.constant(value);
        let mut e = [0u8; MAX_VARS];
        e[var] = 1;
        if let Some(&i) = self.index.get(&e) {
            jet.c[i] = 1.0;
        }
        jet
    }

    fn full(&self) -> Known {
        Known {
            total: self.max_total as i16,
            base: self.max_base as i16,
        }
    }
}

fn enumerate(nvars: usize, remaining: usize, var: usize, cur: &mut Exponent, f: &mut impl FnMut(&Exponent)) {
    if var + 1 == nvars {
        cur[var] = remaining as u8;
        f(cur);
        cur[var] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        cur[var] = k as u8;
        enumerate(nvars, remaining - k, var + 1, cur, f);
    }
    cur[var] = 0;
}

/// Orders up to which a jet's coefficients are valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Known {
    pub total: i16,
    pub base: i16,
}

impl Known {
    fn meet(self, other: Known) -> Known {
        Known {
            total: self.total.min(other.total),
            base: self.base.min(other.base),
        }
    }
}

/// A truncated Taylor expansion; see the module docs.
#[derive(Clone)]
pub struct Jet {
    space: &'static JetSpace,
    known: Known,
    c: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("value", &self.c[0])
            .field("known", &self.known)
            .finish()
    }
}

impl Jet {
    pub fn space(&self) -> &'static JetSpace {
        self.space
    }

    pub fn known(&self) -> Known {
        self.known
    }

    /// Constant term.
    pub fn value(&self) -> f64 {
        debug_assert!(self.known.total >= 0, "jet differentiated past its order");
        self.c[0]
    }

    /// Raw Taylor coefficient `f^(α)/α!`.
    pub fn coeff(&self, alpha: &[u8]) -> Option<f64> {
        let total: i16 = alpha.iter().map(|&a| a as i16).sum();
        let base: i16 = alpha[..self.space.nbase.min(alpha.len())]
            .iter()
            .map(|&a| a as i16)
            .sum();
        if total > self.known.total || base > self.known.base {
            return None;
        }
        self.space.index_of(alpha).map(|i| self.c[i])
    }

    /// Partial derivative `∂^α f` at the expansion point.
    pub fn partial(&self, alpha: &[u8]) -> Option<f64> {
        let fact: f64 = alpha.iter().map(|&a| factorial(a as usize)).product();
        self.coeff(alpha).map(|c| c * fact)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Overwrite the coefficient of `alpha`. Used to assemble jets whose
    /// coefficients come from elsewhere (finite differences in the base).
    pub fn set_coeff(&mut self, alpha: &[u8], value: f64) {
        let i = self
            .space
            .index_of(alpha)
            .expect("multi-index outside the jet space");
        self.c[i] = value;
    }

    /// Restrict the known set (used by assembled jets).
    pub fn with_known(mut self, total: usize, base: usize) -> Jet {
        self.known = self.known.meet(Known {
            total: total as i16,
            base: base as i16,
        });
        self
    }

    pub fn constant_like(&self, value: f64) -> Jet {
        self.space.constant(value)
    }

    /// `∂f/∂v` as a jet.
    pub fn d(&self, var: usize) -> Jet {
        let mut c = vec![0.0; self.c.len()];
        for &(from, to, factor) in &self.space.deriv[var] {
            c[to as usize] = factor * self.c[from as usize];
        }
        let mut known = self.known;
        known.total -= 1;
        if var < self.space.nbase {
            known.base -= 1;
        }
        Jet {
            space: self.space,
            known,
            c,
        }
    }

    fn mul_into(&self, other: &Jet, out: &mut [f64]) -> Known {
        debug_assert!(std::ptr::eq(self.space, other.space), "mixed jet spaces");
        let known = self.known.meet(other.known);
        let a = &self.c;
        let b = &other.c;
        let kt = known.total.max(-1);
        for t in 0..=kt {
            let bucket = &self.space.pairs[t as usize];
            let kb = (known.base as isize).min(bucket.len() as isize - 1);
            for bd in 0..=kb {
                for &(i, j, o) in &bucket[bd as usize] {
                    out[o as usize] += a[i as usize] * b[j as usize];
                }
            }
        }
        known
    }

    fn mul_jet(&self, other: &Jet) -> Jet {
        let mut c = vec![0.0; self.c.len()];
        let known = self.mul_into(other, &mut c);
        Jet {
            space: self.space,
            known,
            c,
        }
    }

    /// `Σ_k coeffs[k] (self − a)^k` with `a` the constant term.
    fn compose(&self, coeffs: &[f64]) -> Jet {
        let mut delta = self.clone();
        delta.c[0] = 0.0;
        let last = coeffs.len() - 1;
        let mut acc = self.space.constant(coeffs[last]);
        acc.known = self.known;
        for k in (0..last).rev() {
            acc = acc.mul_jet(&delta);
            acc.c[0] += coeffs[k];
        }
        acc
    }

    fn order(&self) -> usize {
        self.known.total.max(0) as usize
    }

    pub fn recip(&self) -> Jet {
        let a = self.c[0];
        let n = self.order();
        let mut coeffs = Vec::with_capacity(n + 1);
        let mut p = 1.0 / a;
        for _ in 0..=n {
            coeffs.push(p);
            p *= -1.0 / a;
        }
        self.compose(&coeffs)
    }

    pub fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        let n = self.order();
        let coeffs: Vec<f64> = (0..=n).map(|k| e / factorial(k)).collect();
        self.compose(&coeffs)
    }

    pub fn ln(&self) -> Jet {
        let a = self.c[0];
        let n = self.order();
        let mut coeffs = vec![a.ln()];
        for k in 1..=n {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            coeffs.push(sign / (k as f64 * a.powi(k as i32)));
        }
        self.compose(&coeffs)
    }

    pub fn powf(&self, p: f64) -> Jet {
        let a = self.c[0];
        let n = self.order();
        let mut coeffs = Vec::with_capacity(n + 1);
        let mut binom = 1.0;
        for k in 0..=n {
            coeffs.push(binom * a.powf(p - k as f64));
            binom *= (p - k as f64) / (k as f64 + 1.0);
        }
        self.compose(&coeffs)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [s, c, -s, -c];
        let n = self.order();
        let coeffs: Vec<f64> = (0..=n).map(|k| cycle[k % 4] / factorial(k)).collect();
        self.compose(&coeffs)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [c, -s, -c, s];
        let n = self.order();
        let coeffs: Vec<f64> = (0..=n).map(|k| cycle[k % 4] / factorial(k)).collect();
        self.compose(&coeffs)
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

// ---------------------------------------------------------------------------
// operators

impl Add<&Jet> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: &Jet) -> Jet {
        for (a, b) in self.c.iter_mut().zip(&rhs.c) {
            *a += b;
        }
        self.known = self.known.meet(rhs.known);
        self
    }
}

impl Sub<&Jet> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: &Jet) -> Jet {
        for (a, b) in self.c.iter_mut().zip(&rhs.c) {
            *a -= b;
        }
        self.known = self.known.meet(rhs.known);
        self
    }
}

impl Mul<&Jet> for Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.mul_jet(rhs)
    }
}

impl Div<&Jet> for Jet {
    type Output = Jet;
    fn div(self, rhs: &Jet) -> Jet {
        self.mul_jet(&rhs.recip())
    }
}

macro_rules! by_value {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
        impl $tr<&Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                self.clone().$m(rhs)
            }
        }
    )*};
}
by_value!(Add add, Sub sub, Mul mul, Div div);

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for a in self.c.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.c[0] -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        for a in self.c.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self * (1.0 / rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn space_sizes() {
        assert_eq!(JetSpace::get(2, 0, 4, 0).len(), 15);
        assert_eq!(JetSpace::get(4, 2, 4, 4).len(), 70);
        // |α| ≤ 4 with at most two base powers: 15 + 2·10 + 3·6
        assert_eq!(JetSpace::get(4, 2, 4, 2).len(), 53);
    }

    #[test]
    fn product_matches_polynomial() {
        let s = JetSpace::get(2, 0, 3, 0);
        let x = s.variable(0, 2.0);
        let y = s.variable(1, -1.0);
        // f = x^2 y at (2, -1): f_xx = 2y = -2, f_xy = 2x = 4, f_xxy = 2
        let f = x.clone() * &x * &y;
        assert!(close(f.value(), -4.0, 1e-15));
        assert!(close(f.partial(&[2, 0]).unwrap(), -2.0, 1e-15));
        assert!(close(f.partial(&[1, 1]).unwrap(), 4.0, 1e-15));
        assert!(close(f.partial(&[2, 1]).unwrap(), 2.0, 1e-15));
        assert_eq!(f.partial(&[3, 1]), None);
    }

    #[test]
    fn elementary_functions() {
        let s = JetSpace::get(1, 0, 5, 0);
        let x = s.variable(0, 0.7);
        let e = x.exp();
        for k in 0..=5u8 {
            assert!(close(e.partial(&[k]).unwrap(), 0.7f64.exp(), 1e-14));
        }
        let l = x.ln();
        // d^3/dx^3 ln x = 2 / x^3
        assert!(close(l.partial(&[3]).unwrap(), 2.0 / 0.7f64.powi(3), 1e-13));
        let si = x.sin();
        assert!(close(si.partial(&[3]).unwrap(), -(0.7f64.cos()), 1e-14));
        let co = x.cos();
        assert!(close(co.partial(&[2]).unwrap(), -(0.7f64.cos()), 1e-14));
        let p = x.powf(2.5);
        // d^2/dx^2 x^2.5 = 3.75 x^0.5
        assert!(close(p.partial(&[2]).unwrap(), 3.75 * 0.7f64.sqrt(), 1e-13));
        let r = x.recip();
        assert!(close(r.partial(&[4]).unwrap(), 24.0 / 0.7f64.powi(5), 1e-12));
    }

    #[test]
    fn quotient_rule() {
        let s = JetSpace::get(2, 0, 2, 0);
        let x = s.variable(0, 1.5);
        let y = s.variable(1, 0.5);
        let q = x.clone() / &y;
        // ∂²(x/y)/∂x∂y = -1/y²
        assert!(close(q.partial(&[1, 1]).unwrap(), -4.0, 1e-14));
        assert!(close(q.partial(&[0, 2]).unwrap(), 2.0 * 1.5 / 0.125, 1e-13));
    }

    #[test]
    fn derivative_tracks_known_orders() {
        let s = JetSpace::get(4, 2, 5, 2);
        let x = s.variable(0, 0.3);
        let y = s.variable(2, 1.2);
        let f = (x.clone() * &y).sin();
        let fx = f.d(0);
        assert_eq!(fx.known(), Known { total: 4, base: 1 });
        let fy = f.d(2);
        assert_eq!(fy.known(), Known { total: 4, base: 2 });
        // ∂x f = y cos(xy)
        assert!(close(fx.value(), 1.2 * (0.36f64).cos(), 1e-14));
        // ∂x² f beyond base order 2 after two x-derivatives
        let fxx = fx.d(0);
        assert!(fxx.coeff(&[1, 0, 0, 0]).is_none());
        assert!(fxx.coeff(&[0, 0, 1, 0]).is_some());
    }

    #[test]
    fn products_ignore_unknown_coefficients() {
        let s = JetSpace::get(1, 0, 4, 0);
        let x = s.variable(0, 0.5);
        let f = x.exp();
        let g = f.d(0).d(0); // known to order 2
        let h = g.clone() * &x.sin();
        assert_eq!(h.known().total, 2);
        // (e^x sin x)'' = 2 e^x cos x
        assert!(close(h.partial(&[2]).unwrap(), 2.0 * 0.5f64.exp() * 0.5f64.cos(), 1e-13));
    }
}
