use finsler::grid::{grid_curvature, sample_logf, FiberCalculus, GridFinsler};
use finsler::measure::{
    curvature_fields, fiber_measure, functional_i, global_inner, liouville_density, sm_integrate, CFun,
    CurvatureSource, MeasureField,
};
use finsler::structure::{raw_fundamental_tensor, Scaled};
use finsler::zoo::{get_entry, list, ConformalTorus, Params, QuarticMinkowski, RandersTorus};
use finsler::{build_grid, BaseMode, DerivMode, FiberGrid, FinslerStructure};
use ndarray::Array3;
use std::f64::consts::PI;
use std::sync::Arc;

fn euclid() -> Arc<dyn FinslerStructure> {
    get_entry("euclidean", &Params::new()).unwrap().shared()
}

#[test]
fn euclidean_density_is_one() {
    let e = euclid();
    for k in 0..16 {
        let r = liouville_density(e.as_ref(), &[0.4, 1.1], k as f64 * 0.4).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
    }
}

#[test]
fn riemannian_fiber_measure_is_two_pi_sqrt_det() {
    let scaled = Scaled {
        inner: euclid(),
        factor: 2.0,
    };
    let v = fiber_measure(&scaled, &[0.3, 0.2], 256).unwrap();
    assert!((v - 8.0 * PI).abs() < 1e-10);
    for entry in list().into_iter().filter(|e| e.flags.riemannian && e.dim() == 2) {
        let a = entry.references.riemannian_metric.clone().unwrap();
        for i in 0..4 {
            let (x, _) = finsler::structure::sample_point(&entry.chart(), 2, i);
            let m = a(&x);
            let expect = 2.0 * PI * (m[0] * m[3] - m[1] * m[2]).sqrt();
            let got = fiber_measure(entry.structure(), &x, 256).unwrap();
            assert!((got - expect).abs() <= 1e-6 * expect, "{}: {got} vs {expect}", entry.name);
        }
    }
}

#[test]
fn quartic_fiber_measure_converges() {
    let q = QuarticMinkowski;
    let x = [0.0, 0.0];
    let coarse = fiber_measure(&q, &x, 256).unwrap();
    let fine = fiber_measure(&q, &x, 2560).unwrap();
    assert!((coarse - fine).abs() <= 1e-6 * fine, "{coarse} vs {fine}");
    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let a = fiber_measure(&r, &[1.0, 2.0], 128).unwrap();
    let b = fiber_measure(&r, &[1.0, 2.0], 256).unwrap();
    assert!((a - b).abs() <= 1e-6 * b);
}

#[test]
fn integrals_over_sm() {
    let (grid, fiber) = build_grid(2, 16, 2.0 * PI, 32).unwrap();
    let m = MeasureField::from_structure(euclid().as_ref(), &grid, &fiber).unwrap();
    let one = Array3::from_elem(m.rho.raw_dim(), 1.0);
    let v = sm_integrate(&one, &m).unwrap();
    assert!((v - 2.0 * PI * (2.0 * PI).powi(2)).abs() < 1e-10);
    assert!((m.volume() - v).abs() < 1e-12);

    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let m = MeasureField::from_structure(&r, &grid, &fiber).unwrap();
    let f = Array3::from_shape_fn(m.rho.raw_dim(), |(i, j, k)| (i as f64).sin() + (j * k) as f64 * 0.01);
    let h = Array3::from_shape_fn(m.rho.raw_dim(), |(i, j, k)| (k as f64).cos() - (i + j) as f64 * 0.1);
    let lhs = sm_integrate(&(&f * 2.0 + &h * 3.0), &m).unwrap();
    let rhs = 2.0 * sm_integrate(&f, &m).unwrap() + 3.0 * sm_integrate(&h, &m).unwrap();
    assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));

    let wrong = Array3::<f64>::zeros((16, 16, 16));
    assert!(sm_integrate(&wrong, &m).is_err());
}

#[test]
fn global_inner_product_identities() {
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 32).unwrap();
    let r = RandersTorus::new(0.2, 0.15).unwrap();
    let m = MeasureField::from_structure(&r, &grid, &fiber).unwrap();
    let g = m.metric.clone();
    let gg = global_inner(&g, &g, &m).unwrap();
    assert!((gg - 2.0 * m.volume()).abs() < 1e-10 * gg);
    let sh = m.rho.raw_dim();
    let a = [
        Array3::from_shape_fn(sh, |(i, j, k)| ((i + 2 * j + 3 * k) as f64).sin()),
        Array3::from_shape_fn(sh, |(i, _, k)| ((i * k) as f64 * 0.1).cos()),
        Array3::from_shape_fn(sh, |(_, j, k)| 1.0 + (j as f64 - k as f64) * 0.05),
    ];
    let b = [
        Array3::from_shape_fn(sh, |(i, j, _)| (i * j) as f64 * 0.01),
        Array3::from_shape_fn(sh, |(_, _, k)| (k as f64).sin()),
        Array3::from_shape_fn(sh, |(i, _, _)| 2.0 - i as f64 * 0.1),
    ];
    let ab = global_inner(&a, &b, &m).unwrap();
    let ba = global_inner(&b, &a, &m).unwrap();
    assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
    assert!(global_inner(&a, &a, &m).unwrap() > 0.0);
    // (h, g) = ∫ g^{ij} h_ij η
    let det = &g[0] * &g[2] - &g[1] * &g[1];
    let tr = (&g[2] * &a[0] - &(&g[1] * &a[1]) * 2.0 + &g[0] * &a[2]) / &det;
    let expect = sm_integrate(&tr, &m).unwrap();
    let got = global_inner(&a, &g, &m).unwrap();
    assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
}

#[test]
fn flat_torus_functional_vanishes() {
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 32).unwrap();
    for c in [CFun::Zero, CFun::Constant(1.5)] {
        let rep = functional_i(euclid().as_ref(), &c, &grid, &fiber, CurvatureSource::default()).unwrap();
        assert!(rep.i.abs() < 1e-12 && rep.c_bar.abs() < 1e-12);
        assert_eq!(rep.i, rep.i_normalized);
    }
}

#[test]
fn gauss_bonnet_on_conformal_torus() {
    let fs = ConformalTorus { amp: 0.2 };
    let (grid, fiber) = build_grid(2, 32, 2.0 * PI, 32).unwrap();
    let rep = functional_i(&fs, &CFun::Zero, &grid, &fiber, CurvatureSource::default()).unwrap();
    let kmax = 0.4 * 0.4f64.exp();
    assert!(rep.i.abs() <= 1e-3 * rep.volume * kmax, "I = {}", rep.i);
}

#[test]
fn functional_is_scale_invariant_on_surfaces() {
    let r: Arc<dyn FinslerStructure> = Arc::new(RandersTorus::new(0.2, 0.15).unwrap());
    let r2 = Scaled {
        inner: r.clone(),
        factor: 2.0,
    };
    let (grid, fiber) = build_grid(2, 16, 2.0 * PI, 32).unwrap();
    let a = functional_i(r.as_ref(), &CFun::Zero, &grid, &fiber, CurvatureSource::default()).unwrap();
    let b = functional_i(&r2, &CFun::Zero, &grid, &fiber, CurvatureSource::default()).unwrap();
    assert!((a.i - b.i).abs() <= 1e-6 * a.i.abs().max(1e-12), "{} vs {}", a.i, b.i);
    assert!((b.volume - 4.0 * a.volume).abs() <= 1e-10 * b.volume);
}

#[test]
fn grid_pipeline_matches_gauss_curvature() {
    let fs = ConformalTorus { amp: 0.2 };
    let (grid, fiber) = build_grid(2, 48, 2.0 * PI, 16).unwrap();
    let logf = sample_logf(&fs, &grid, &fiber).unwrap();
    let fc = FiberCalculus::new(&fiber);
    for mode in [DerivMode::FiniteDifference, DerivMode::Spectral] {
        let gc = grid_curvature(&logf, &grid, &fc, mode).unwrap();
        let mut worst = 0.0f64;
        for ((i, j, _), h) in gc.huu.indexed_iter() {
            let k = fs.gauss_curvature(&[grid.coord(0, i), grid.coord(1, j)]);
            worst = worst.max((h - k).abs() / (1.0 + k.abs()));
        }
        let tol = if mode == DerivMode::Spectral { 1e-9 } else { 1e-3 };
        assert!(worst < tol, "{mode:?}: {worst}");
    }
}

#[test]
fn grid_pipeline_matches_pointwise_on_randers() {
    let fs = RandersTorus::new(0.2, 0.15).unwrap();
    let (grid, fiber) = build_grid(2, 24, 2.0 * PI, 32).unwrap();
    let (_, pw) = curvature_fields(&fs, &grid, &fiber, CurvatureSource::Pointwise(BaseMode::Analytic)).unwrap();
    let (mg, gr) = curvature_fields(&fs, &grid, &fiber, CurvatureSource::Grid(DerivMode::Spectral)).unwrap();
    let diff = (&pw.ricci_directional - &gr.ricci_directional).mapv(f64::abs);
    assert!(diff.iter().cloned().fold(0.0, f64::max) < 1e-8);
    let dt = (&pw.h_tilde - &gr.h_tilde).mapv(f64::abs);
    assert!(dt.iter().cloned().fold(0.0, f64::max) < 1e-6);
    let mp = MeasureField::from_structure(&fs, &grid, &fiber).unwrap();
    let dr = (&mp.rho - &mg.rho).mapv(f64::abs);
    assert!(dr.iter().cloned().fold(0.0, f64::max) < 1e-9);
}

#[test]
fn reconstructed_structure_round_trips() {
    let fs = RandersTorus::new(0.2, 0.15).unwrap();
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 32).unwrap();
    let logf = sample_logf(&fs, &grid, &fiber).unwrap();
    let gf = GridFinsler::new(&logf, &grid, &fiber).unwrap();
    let x = [grid.coord(0, 3), grid.coord(1, 5)];
    for k in 0..32 {
        let t = fiber.theta(k) + 0.05;
        let y = [1.7 * t.cos(), 1.7 * t.sin()];
        assert!((gf.eval(&x, &y) - fs.eval(&x, &y)).abs() < 1e-9);
        let ga = raw_fundamental_tensor(&fs, &x, &y).unwrap();
        let gg = raw_fundamental_tensor(&gf, &x, &y).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!((ga.get(a, b) - gg.get(a, b)).abs() < 1e-7);
            }
        }
    }
    assert!(finsler::connections::spray(&gf, &x, &[1.0, 0.0]).is_err());
}

#[test]
fn measure_rejects_wrong_shapes() {
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 32).unwrap();
    let bad = Array3::<f64>::zeros((8, 8, 16));
    assert!(MeasureField::from_logf(&bad, &grid, &fiber).is_err());
    let f16 = FiberGrid::new(16).unwrap();
    assert!(GridFinsler::new(&bad, &grid, &f16).is_ok());
}
