use finsler::connections::JetField;
use finsler::measure::{global_inner, MeasureField};
use finsler::structure::fundamental_tensor;
use finsler::variations::{
    adjointness_residual, codifferential, conformal_variation, divergence_delta_at, family_variation,
    lie_derivative_at, lie_derivative_metric, raw_variation, trace_split, variation_residuals, FormKind, Generator,
    MetricPath, TrigSeries,
};
use finsler::zoo::{get_entry, ConformalTorus, Params, RandersTorus};
use finsler::{build_grid, FinslerStructure};
use std::f64::consts::PI;
use std::sync::Arc;

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn vector_field() -> Vec<TrigSeries> {
    vec![
        TrigSeries::cosine(0.3, &[0.0, 1.0], 0.4).plus(TrigSeries::constant(0.1)),
        TrigSeries::cosine(-0.2, &[1.0, 1.0], 0.0),
    ]
}

fn drift() -> Vec<TrigSeries> {
    vec![
        TrigSeries::cosine(0.1, &[1.0, 0.0], 0.3),
        TrigSeries::cosine(0.05, &[0.0, 1.0], 0.0).plus(TrigSeries::constant(0.02)),
    ]
}

/// `d/dt g_ij(x + tX, y + t y^m ∂_m X) (δ + t ∂X)^a_i (δ + t ∂X)^b_j` at 0.
fn pullback_oracle(fs: &dyn FinslerStructure, field: &[TrigSeries], x: &[f64], y: &[f64]) -> [[f64; 2]; 2] {
    let h = 1e-5;
    let at = |t: f64| {
        let xv: Vec<f64> = field.iter().map(|c| c.value(x)).collect();
        let jac: Vec<Vec<f64>> = field.iter().map(|c| c.gradient(x)).collect();
        let xt: Vec<f64> = (0..2).map(|i| x[i] + t * xv[i]).collect();
        let yt: Vec<f64> = (0..2).map(|k| y[k] + t * (0..2).map(|m| y[m] * jac[k][m]).sum::<f64>()).collect();
        let g = fundamental_tensor(fs, &xt, &yt).unwrap();
        let d = |a: usize, i: usize| if a == i { 1.0 } else { 0.0 } + t * jac[a][i];
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        out[i][j] += g.get(a, b) * d(a, i) * d(b, j);
                    }
                }
            }
        }
        out
    };
    let (p, m) = (at(h), at(-h));
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = (p[i][j] - m[i][j]) / (2.0 * h);
        }
    }
    out
}

#[test]
fn lie_derivative_matches_pullback() {
    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let c = ConformalTorus { amp: 0.2 };
    let x_field = vector_field();
    for fs in [&r as &dyn FinslerStructure, &c] {
        for i in 0..6 {
            let (x, y) = finsler::structure::sample_point(&fs.chart(), 2, i);
            let l = lie_derivative_at(&x_field, fs, &x, &y).unwrap();
            let o = pullback_oracle(fs, &x_field, &x, &y);
            for a in 0..2 {
                for b in 0..2 {
                    assert!((l.get(a, b) - o[a][b]).abs() < 1e-4, "{}: {} vs {}", fs.name(), l.get(a, b), o[a][b]);
                }
            }
        }
    }
    // Killing field of the flat torus
    let e = get_entry("euclidean", &Params::new()).unwrap();
    let constant = vec![TrigSeries::constant(0.3), TrigSeries::constant(-1.0)];
    let l = lie_derivative_at(&constant, e.structure(), &[0.2, 0.4], &[0.6, 0.8]).unwrap();
    assert!(l.to_matrix().iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn riemannian_lie_derivative_is_killing_operator() {
    // a = e^{2u} δ: (L_X a)_ij = e^{2u}(∂_i X_j + ∂_j X_i + 2 δ_ij X·∇u)
    let amp = 0.2;
    let c = ConformalTorus { amp };
    let x_field = vector_field();
    for i in 0..6 {
        let (x, y) = finsler::structure::sample_point(&c.chart(), 2, i);
        let u = c.u(&x);
        let du = [amp * x[0].cos() * x[1].cos(), -amp * x[0].sin() * x[1].sin()];
        let xv: Vec<f64> = x_field.iter().map(|f| f.value(&x)).collect();
        let jac: Vec<Vec<f64>> = x_field.iter().map(|f| f.gradient(&x)).collect();
        let l = lie_derivative_at(&x_field, &c, &x, &y).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let d = if a == b { 1.0 } else { 0.0 };
                let e = (2.0 * u).exp() * (jac[b][a] + jac[a][b] + 2.0 * d * (xv[0] * du[0] + xv[1] * du[1]));
                assert!((l.get(a, b) - e).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn riemannian_divergence() {
    // h = k a on a Riemannian structure: δh_k = −∂_k k
    let c = ConformalTorus { amp: 0.2 };
    let k = TrigSeries::cosine(0.4, &[1.0, 2.0], 0.1);
    let gen = Generator::Conformal { k: k.clone() };
    for i in 0..6 {
        let (x, y) = finsler::structure::sample_point(&c.chart(), 2, i);
        let d = divergence_delta_at(&gen, &c, &x, &y).unwrap();
        let gk = k.gradient(&x);
        for j in 0..2 {
            assert!((d[j] + gk[j]).abs() < 1e-6, "{} vs {}", d[j], -gk[j]);
        }
    }
    // constant h on a flat structure
    let e = get_entry("euclidean", &Params::new()).unwrap();
    let d = divergence_delta_at(&Generator::Conformal { k: TrigSeries::constant(2.0) }, e.structure(), &[1.0, 1.0], &[0.3, 0.4])
        .unwrap();
    assert!(d.iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn codifferentials() {
    let c = ConformalTorus { amp: 0.2 };
    // a = dφ with φ = sin x₁ + cos 2x₂: δa = −e^{−2u} Δφ
    let grad = JetField {
        upper: 0,
        lower: 1,
        fiber_order: 0,
        eval: Box::new(|x, _y| vec![x[0].cos(), (x[1].clone() * 2.0).sin() * -2.0]),
    };
    for i in 0..5 {
        let (x, y) = finsler::structure::sample_point(&c.chart(), 2, i);
        let lap = -x[0].sin() - 4.0 * (2.0 * x[1]).cos();
        let expect = -(-2.0 * c.u(&x)).exp() * lap;
        let got = codifferential(&grad, FormKind::Horizontal, &c, &x, &y).unwrap();
        assert!((got - expect).abs() < 1e-8, "{got} vs {expect}");
    }
    // b_i = ∂F/∂y^i: δb = −F g^{ij} F_ij = −(n − 1)
    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let rr = r.clone();
    let hilbert = JetField {
        upper: 0,
        lower: 1,
        fiber_order: 1,
        eval: Box::new(move |x, y| {
            let f = rr.eval_jet(x, y);
            vec![f.d(2), f.d(3)]
        }),
    };
    for i in 0..5 {
        let (x, y) = finsler::structure::sample_point(&r.chart(), 2, i);
        let got = codifferential(&hilbert, FormKind::Vertical, &r, &x, &y).unwrap();
        assert!((got + 1.0).abs() < 1e-10, "{got}");
    }
    let zero = JetField {
        upper: 0,
        lower: 1,
        fiber_order: 0,
        eval: Box::new(|x, _| vec![x[0].constant_like(0.0); 2]),
    };
    for kind in [FormKind::Horizontal, FormKind::Vertical] {
        assert_eq!(codifferential(&zero, kind, &r, &[0.1, 0.2], &[1.0, 0.3]).unwrap(), 0.0);
    }
    assert!(codifferential(&JetField::metric(&r), FormKind::Vertical, &r, &[0.1, 0.2], &[1.0, 0.3]).is_err());
}

#[test]
fn conformal_and_family_fields_are_members() {
    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 32).unwrap();
    let one = conformal_variation(&TrigSeries::constant(1.0), &r, &grid, &fiber).unwrap();
    assert!(one.membership.worst() <= 1e-10);
    let m = MeasureField::from_structure(&r, &grid, &fiber).unwrap();
    let gi = finsler::grid::inverse(&m.metric);
    let tr = finsler::grid::trace(&gi, &one.h);
    assert!(tr.iter().all(|v| (v - 2.0).abs() < 1e-10));
    let fam = family_variation(&drift(), &r, &grid, &fiber).unwrap();
    assert!(fam.membership.worst() <= 1e-10, "{:?}", fam.membership);
    let lie = lie_derivative_metric(&vector_field(), &r, &grid, &fiber).unwrap();
    assert!(lie.membership.worst() <= 1e-6, "{:?}", lie.membership);
    // an arbitrary field is generally not a member
    let mut bad = m.metric.clone();
    bad[1] = bad[1].mapv(|v| v + 0.1) * &m.rho;
    let raw = raw_variation(bad, &grid, &fiber).unwrap();
    assert!(raw.membership.symmetry > 1e-3);
}

#[test]
fn conformal_field_has_h_of_u_equal_k() {
    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let k = TrigSeries::cosine(0.5, &[1.0, 0.0], 0.0);
    let gen = Generator::Conformal { k: k.clone() };
    for i in 0..6 {
        let (x, y) = finsler::structure::sample_point(&r.chart(), 2, i);
        let h = gen.h_at(&r, &x, &y).unwrap();
        let f = r.eval(&x, &y);
        assert!((h.quadratic(&y) / (f * f) - k.value(&x)).abs() < 1e-12);
    }
}

#[test]
fn trace_split_is_an_orthogonal_projection() {
    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 32).unwrap();
    let m = MeasureField::from_structure(&r, &grid, &fiber).unwrap();
    let h = family_variation(&drift(), &r, &grid, &fiber).unwrap().h;
    let (conf, free) = trace_split(&h, &m.metric);
    let hh = global_inner(&h, &h, &m).unwrap();
    assert!(global_inner(&conf, &free, &m).unwrap().abs() <= 1e-10 * hh);
    let (c2, f2) = trace_split(&free, &m.metric);
    for a in 0..3 {
        assert!(c2[a].iter().all(|v| v.abs() < 1e-12));
        assert!((&f2[a] - &free[a]).iter().all(|v| v.abs() < 1e-12));
    }
    let kg = conformal_variation(&TrigSeries::cosine(0.3, &[1.0, 0.0], 0.0), &r, &grid, &fiber).unwrap().h;
    let (c3, f3) = trace_split(&kg, &m.metric);
    for a in 0..3 {
        assert!(f3[a].iter().all(|v| v.abs() < 1e-10));
        assert!((&c3[a] - &kg[a]).iter().all(|v| v.abs() < 1e-10));
    }
}

#[test]
fn adjointness_closes_on_randers_background() {
    let bg = RandersTorus::new(0.3, 0.0).unwrap();
    let (grid, fiber) = build_grid(2, 24, 2.0 * PI, 24).unwrap();
    let v = family_variation(&drift(), &bg, &grid, &fiber).unwrap();
    let a = adjointness_residual(&vector_field(), &v, &bg).unwrap();
    assert!(a.residual < 1e-3, "{a:?}");
    let zero = vec![TrigSeries::constant(0.0); 2];
    assert_eq!(adjointness_residual(&zero, &v, &bg).unwrap().residual, 0.0);
    let mut v2 = v.clone();
    v2.generator = Some(Generator::Randers {
        beta: drift()
            .into_iter()
            .map(|s| TrigSeries {
                constant: 2.0 * s.constant,
                terms: s
                    .terms
                    .into_iter()
                    .map(|mut t| {
                        t.amp *= 2.0;
                        t
                    })
                    .collect(),
            })
            .collect(),
    });
    v2.h = [&v.h[0] * 2.0, &v.h[1] * 2.0, &v.h[2] * 2.0];
    let b = adjointness_residual(&vector_field(), &v2, &bg).unwrap();
    assert!((b.lie_side - 2.0 * a.lie_side).abs() < 1e-12 * a.lie_side.abs().max(1.0));
    assert!((b.delta_side - 2.0 * a.delta_side).abs() < 1e-10 * a.delta_side.abs().max(1.0));
}

#[test]
fn adjointness_on_curved_finsler_background() {
    let bg = RandersTorus::new(0.2, 0.15).unwrap();
    let (grid, fiber) = build_grid(2, 24, 2.0 * PI, 24).unwrap();
    let v = conformal_variation(&TrigSeries::cosine(0.3, &[1.0, 1.0], 0.2), &bg, &grid, &fiber).unwrap();
    let a = adjointness_residual(&vector_field(), &v, &bg).unwrap();
    assert!(a.residual < 1e-3, "{a:?}");
}

#[test]
fn first_variation_formulas_along_randers_family() {
    let bg = get_entry("randers-torus", &params(&[("b", 0.3)])).unwrap().shared();
    let path = MetricPath {
        base: bg,
        generator: Generator::Randers { beta: drift() },
    };
    let (grid, fiber) = build_grid(2, 16, 2.0 * PI, 32).unwrap();
    let rep = variation_residuals(&path, &grid, &fiber, 1e-4, 8).unwrap();
    assert!(rep.volume_trace.residual <= 1e-3, "{rep:?}");
    assert!(rep.volume_directional.residual <= 1e-3, "{rep:?}");
    assert!(rep.density_residual <= 1e-3, "{rep:?}");
    assert!(rep.connection_residual <= 1e-3, "{rep:?}");
    assert!(rep.functional.is_none());
}

#[test]
fn conformal_path_density_identity_and_flat_stationarity() {
    let r: Arc<dyn FinslerStructure> = Arc::new(RandersTorus::new(0.2, 0.15).unwrap());
    let path = MetricPath {
        base: r,
        generator: Generator::Conformal {
            k: TrigSeries::cosine(0.3, &[1.0, 0.0], 0.0),
        },
    };
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 32).unwrap();
    let rep = variation_residuals(&path, &grid, &fiber, 1e-4, 4).unwrap();
    assert!(rep.density_residual <= 1e-6, "{rep:?}");
    assert!(rep.volume_trace.residual <= 1e-6, "{rep:?}");

    let flat = get_entry("euclidean", &Params::new()).unwrap().shared();
    let path = MetricPath {
        base: flat,
        generator: Generator::Conformal {
            k: TrigSeries::constant(0.0),
        },
    };
    let rep = variation_residuals(&path, &grid, &fiber, 1e-4, 4).unwrap();
    assert_eq!(rep.worst(), 0.0, "{rep:?}");
}
