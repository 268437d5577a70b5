use finsler::curvature::ricci_directional;
use finsler::flow::{Checkpoint, FlowConfig, FlowState};
use finsler::numerics::SpectralAxis;
use finsler::structure::{cartan_tensor, fundamental_tensor, Scaled};
use finsler::variations::TrigSeries;
use finsler::zoo::{get_entry, Params, RandersTorus};
use finsler::{build_grid, FinslerStructure, JetSpace};
use ndarray::Array1;
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn randers() -> impl Strategy<Value = RandersTorus> {
    (-0.5f64..0.5, 0.0f64..0.2).prop_map(|(b, w)| RandersTorus::new(b, w).unwrap())
}

fn point() -> impl Strategy<Value = ([f64; 2], [f64; 2])> {
    (0.0f64..2.0 * PI, 0.0f64..2.0 * PI, 0.0f64..2.0 * PI, 0.2f64..3.0)
        .prop_map(|(a, b, t, r)| ([a, b], [r * t.cos(), r * t.sin()]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn finsler_function_is_positively_homogeneous(r in randers(), (x, y) in point(), lambda in 0.05f64..20.0) {
        let f = r.eval(&x, &y);
        let ly = [lambda * y[0], lambda * y[1]];
        prop_assert!((r.eval(&x, &ly) - lambda * f).abs() <= 1e-12 * lambda * f);
        let g = fundamental_tensor(&r, &x, &y).unwrap();
        let gl = fundamental_tensor(&r, &x, &ly).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((g.get(i, j) - gl.get(i, j)).abs() <= 1e-10);
            }
        }
        // g(y, y) = F²
        prop_assert!((g.quadratic(&y) - f * f).abs() <= 1e-10 * f * f);
    }

    #[test]
    fn cartan_tensor_annihilates_y(r in randers(), (x, y) in point()) {
        let c = cartan_tensor(&r, &x, &y).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = (0..2).map(|k| c.get(i, j, k) * y[k]).sum();
                prop_assert!(s.abs() <= 1e-10 * (1.0 + c.max_abs()));
            }
        }
        prop_assert!(fundamental_tensor(&r, &x, &y).unwrap().min_eigenvalue() > 0.0);
    }

    #[test]
    fn directional_curvature_is_zero_homogeneous_and_scales(r in randers(), (x, y) in point(), lambda in 0.2f64..5.0) {
        let h = ricci_directional(&r, &x, &y).unwrap();
        let hl = ricci_directional(&r, &x, &[lambda * y[0], lambda * y[1]]).unwrap();
        prop_assert!((h - hl).abs() <= 1e-9 * (1.0 + h.abs()));
        let scaled = Scaled { inner: Arc::new(r.clone()), factor: lambda };
        let hs = ricci_directional(&scaled, &x, &y).unwrap();
        prop_assert!((hs - h / (lambda * lambda)).abs() <= 1e-9 * (1.0 + h.abs()));
    }

    #[test]
    fn jet_chain_and_product_rules(a in -2.0f64..2.0, b in 1.5f64..3.0, t in -1.0f64..1.0) {
        let sp = JetSpace::get(1, 0, 3, 0);
        let x = sp.variable(0, t);
        let u = (x.clone() * a).sin().exp();
        let v = (x.clone() + b).ln();
        let uv = u.clone() * &v;
        let du = a * (a * t).cos() * (a * t).sin().exp();
        let dv = 1.0 / (t + b);
        let u0 = (a * t).sin().exp();
        let v0 = (t + b).ln();
        prop_assert!((uv.partial(&[1]).unwrap() - (du * v0 + u0 * dv)).abs() <= 1e-12 * (1.0 + du.abs() + dv.abs()));
        // ln(exp(v)) = v to every order
        let back = v.exp().ln();
        for (p, q) in back.coeffs().iter().zip(v.coeffs()) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
        // (x + b)^{-1/2} squared then inverted gives x + b
        let w = (x.clone() + b).powf(-0.5);
        let id = (w.clone() * &w).recip();
        prop_assert!((id.partial(&[1]).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!(id.partial(&[2]).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn spectral_derivative_is_exact_on_trig_polynomials(
        coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..8)
    ) {
        let n = 32;
        let ax = SpectralAxis::new(n, 2.0 * PI);
        let th: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        let f = Array1::from_shape_fn(n, |k| {
            coeffs.iter().enumerate().map(|(m, (a, b))| a * (m as f64 * th[k]).cos() + b * (m as f64 * th[k]).sin()).sum::<f64>()
        });
        let df = Array1::from_shape_fn(n, |k| {
            coeffs.iter().enumerate().map(|(m, (a, b))| {
                let m = m as f64;
                -a * m * (m * th[k]).sin() + b * m * (m * th[k]).cos()
            }).sum::<f64>()
        });
        let got = ax.differentiate(&f, 0, 1);
        for (p, q) in got.iter().zip(df.iter()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn trig_series_gradient_matches_difference_quotient(
        amp in -1.0f64..1.0, f1 in -3i32..3, f2 in -3i32..3, phase in 0.0f64..6.0, x1 in 0.0f64..6.0, x2 in 0.0f64..6.0
    ) {
        let s = TrigSeries::cosine(amp, &[f1 as f64, f2 as f64], phase).plus(TrigSeries::constant(0.3));
        let g = s.gradient(&[x1, x2]);
        let h = 1e-6;
        let d1 = (s.value(&[x1 + h, x2]) - s.value(&[x1 - h, x2])) / (2.0 * h);
        let d2 = (s.value(&[x1, x2 + h]) - s.value(&[x1, x2 - h])) / (2.0 * h);
        prop_assert!((g[0] - d1).abs() <= 1e-7 && (g[1] - d2).abs() <= 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip_is_exact(b in 0.0f64..0.4, wave in 0.0f64..0.2, t in 0.0f64..10.0, step in 0usize..1000) {
        let entry = get_entry("randers-torus", &[("b".to_string(), b), ("wave".to_string(), wave)].into_iter().collect::<Params>()).unwrap();
        let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 16).unwrap();
        let mut s = finsler::flow::encode_state(&entry, &grid, &fiber, FlowConfig::default()).unwrap();
        s.time = t;
        s.step = step;
        let text = serde_json::to_string(&s.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let r = FlowState::from_checkpoint(back).unwrap();
        prop_assert_eq!(r.logf(), s.logf());
        prop_assert_eq!(r.time, t);
        prop_assert_eq!(r.step, step);
    }
}
