//! Small numerical building blocks: deterministic reductions, low-discrepancy
//! samples, periodic stencils and FFT differentiation along one axis.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{ArrayViewMut1, Axis, Dimension, Array, ArrayView1};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Pairwise (tree) summation. The result depends only on the order of
/// `values`, never on how work was split across threads.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Radical-inverse (Halton) point `index` in `dim` dimensions, `dim ≤ 6`.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 6] = [2, 3, 5, 7, 11, 13];
    (0..dim)
        .map(|d| {
            let base = PRIMES[d];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index + 1;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

/// 4th-order central weights for the first derivative at offsets -2..=2.
pub const D1_WEIGHTS: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
/// 4th-order central weights for the second derivative at offsets -2..=2.
pub const D2_WEIGHTS: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

/// Periodic 4th-order finite difference of `order` ∈ {1, 2} along `axis`.
pub fn periodic_fd<D: Dimension>(field: &Array<f64, D>, axis: usize, order: usize, h: f64) -> Array<f64, D> {
    let (weights, scale) = match order {
        1 => (&D1_WEIGHTS, 1.0 / h),
        2 => (&D2_WEIGHTS, 1.0 / (h * h)),
        _ => panic!("periodic_fd supports orders 1 and 2"),
    };
    let mut out = Array::<f64, D>::zeros(field.raw_dim());
    let n = field.len_of(Axis(axis));
    for (src, mut dst) in field.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
        for i in 0..n {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                if *w != 0.0 {
                    acc += w * src[(i + n + k - 2) % n];
                }
            }
            dst[i] = acc * scale;
        }
    }
    out
}

/// FFT-based differentiation along one periodic axis of length `length`.
#[derive(Clone)]
pub struct SpectralAxis {
    n: usize,
    length: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralAxis")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl SpectralAxis {
    pub fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        SpectralAxis {
            n,
            length,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn multiplier(&self, m: usize, order: usize) -> Complex64 {
        let n = self.n;
        let k = if m < n / 2 {
            m as f64
        } else if m > n / 2 || n % 2 == 1 {
            m as f64 - n as f64
        } else {
            // Nyquist mode: its derivative is not representable for odd orders
            if order % 2 == 1 {
                return Complex64::new(0.0, 0.0);
            }
            (n / 2) as f64
        };
        let ik = Complex64::new(0.0, 2.0 * PI * k / self.length);
        let mut out = Complex64::new(1.0, 0.0);
        for _ in 0..order {
            out *= ik;
        }
        out
    }

    fn transform_lane(
        &self,
        src: ArrayView1<f64>,
        mut dst: ArrayViewMut1<f64>,
        buf: &mut Vec<Complex64>,
        symbol: impl Fn(usize) -> Complex64,
    ) {
        buf.clear();
        buf.extend(src.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fwd.process(buf);
        for (m, c) in buf.iter_mut().enumerate() {
            *c *= symbol(m);
        }
        self.inv.process(buf);
        let scale = 1.0 / self.n as f64;
        for (d, c) in dst.iter_mut().zip(buf.iter()) {
            *d = c.re * scale;
        }
    }

    fn transform<D: Dimension>(
        &self,
        field: &Array<f64, D>,
        axis: usize,
        symbol: impl Fn(usize) -> Complex64 + Copy,
    ) -> Array<f64, D> {
        assert_eq!(field.len_of(Axis(axis)), self.n, "spectral axis length mismatch");
        let mut out = Array::<f64, D>::zeros(field.raw_dim());
        let mut buf = Vec::with_capacity(self.n);
        for (src, dst) in field.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
            self.transform_lane(src, dst, &mut buf, symbol);
        }
        out
    }

    /// Differentiate one lane in place.
    pub fn differentiate_lane(&self, src: ArrayView1<f64>, dst: ArrayViewMut1<f64>, order: usize, buf: &mut Vec<Complex64>) {
        self.transform_lane(src, dst, buf, |m| self.multiplier(m, order));
    }

    /// Derivative of `order` along `axis` of an n-dimensional array.
    pub fn differentiate<D: Dimension>(&self, field: &Array<f64, D>, axis: usize, order: usize) -> Array<f64, D> {
        self.transform(field, axis, |m| self.multiplier(m, order))
    }

    /// Keep only the Fourier modes `|m| ≤ keep` along `axis`.
    pub fn low_pass<D: Dimension>(&self, field: &Array<f64, D>, axis: usize, keep: usize) -> Array<f64, D> {
        let n = self.n;
        self.transform(field, axis, move |m| {
            let k = m.min(n - m);
            Complex64::new(if k <= keep { 1.0 } else { 0.0 }, 0.0)
        })
    }

    /// Complex Fourier coefficients `c_m` with `f(θ_k) = Σ c_m e^{i m θ_k}`.
    pub fn coefficients(&self, samples: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|c| c * scale).collect()
    }
}

/// Evaluate the trigonometric interpolant with coefficients `coeffs` (as
/// returned by [`SpectralAxis::coefficients`] on `[0, 2π)`) at angle `theta`.
/// The Nyquist mode is split symmetrically so the interpolant is real.
pub fn trig_interpolate(coeffs: &[Complex64], theta: f64) -> f64 {
    let n = coeffs.len();
    let mut acc = coeffs[0].re;
    for m in 1..n.div_ceil(2) {
        let e = Complex64::from_polar(1.0, m as f64 * theta);
        acc += 2.0 * (coeffs[m] * e).re;
    }
    if n % 2 == 0 {
        acc += coeffs[n / 2].re * (n as f64 / 2.0 * theta).cos();
    }
    acc
}

/// Symmetric eigenvalues of a 2x2 or 3x3 matrix given row-major; returns the
/// minimum and maximum eigenvalue.
pub fn sym_eig_extremes(m: &[f64], n: usize) -> (f64, f64) {
    match n {
        1 => (m[0], m[0]),
        2 => {
            let (a, b, d) = (m[0], m[1], m[3]);
            let mean = 0.5 * (a + d);
            let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mean - r, mean + r)
        }
        3 => {
            // trigonometric solution of the characteristic cubic
            let (a11, a12, a13, a22, a23, a33) = (m[0], m[1], m[2], m[4], m[5], m[8]);
            let p1 = a12 * a12 + a13 * a13 + a23 * a23;
            let q = (a11 + a22 + a33) / 3.0;
            if p1 == 0.0 {
                let mn = a11.min(a22).min(a33);
                let mx = a11.max(a22).max(a33);
                return (mn, mx);
            }
            let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b = [
                (a11 - q) / p, a12 / p, a13 / p,
                a12 / p, (a22 - q) / p, a23 / p,
                a13 / p, a23 / p, (a33 - q) / p,
            ];
            let det_b = b[0] * (b[4] * b[8] - b[5] * b[7]) - b[1] * (b[3] * b[8] - b[5] * b[6])
                + b[2] * (b[3] * b[7] - b[4] * b[6]);
            let r = (det_b / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
            (e3, e1)
        }
        _ => panic!("sym_eig_extremes supports n ≤ 3"),
    }
}

/// Inverse of a small square matrix (n ≤ 3) in row-major order.
pub fn small_inverse(m: &[f64], n: usize) -> Option<Vec<f64>> {
    match n {
        1 => (m[0] != 0.0).then(|| vec![1.0 / m[0]]),
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            (det != 0.0).then(|| vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det])
        }
        3 => {
            let c = |r: usize, k: usize| m[r * 3 + k];
            let cof = [
                c(1, 1) * c(2, 2) - c(1, 2) * c(2, 1),
                c(0, 2) * c(2, 1) - c(0, 1) * c(2, 2),
                c(0, 1) * c(1, 2) - c(0, 2) * c(1, 1),
                c(1, 2) * c(2, 0) - c(1, 0) * c(2, 2),
                c(0, 0) * c(2, 2) - c(0, 2) * c(2, 0),
                c(0, 2) * c(1, 0) - c(0, 0) * c(1, 2),
                c(1, 0) * c(2, 1) - c(1, 1) * c(2, 0),
                c(0, 1) * c(2, 0) - c(0, 0) * c(2, 1),
                c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0),
            ];
            let det = c(0, 0) * cof[0] + c(0, 1) * cof[3] + c(0, 2) * cof[6];
            (det != 0.0).then(|| cof.iter().map(|v| v / det).collect())
        }
        _ => None,
    }
}
