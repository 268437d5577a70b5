use finsler::flow::{
    encode_state, run_flow, stability_dt, CheckpointPlan, CsvSink, FlowConfig, FlowDiagnostics, FlowState, Stepper,
    UniformFlow, CSV_HEADER,
};
use finsler::grid::{sample_logf, GridFinsler};
use finsler::zoo::{get_entry, ConformalTorus, Params, QuarticMinkowski};
use finsler::{build_grid, BaseGrid, FiberGrid, FinslerStructure};
use ndarray::Axis;
use std::f64::consts::PI;

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn state(name: &str, p: &[(&str, f64)], nodes: usize, fiber: usize, config: FlowConfig) -> FlowState {
    let (grid, fiber) = build_grid(2, nodes, 2.0 * PI, fiber).unwrap();
    encode_state(&get_entry(name, &params(p)).unwrap(), &grid, &fiber, config).unwrap()
}

fn max_abs_diff(a: &ndarray::Array3<f64>, b: &ndarray::Array3<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn encoding_samples_log_f() {
    let e = state("euclidean", &[], 8, 16, FlowConfig::default());
    assert!(e.logf().iter().all(|v| v.abs() < 1e-15));
    let r = state("randers-torus", &[("b", 0.3)], 8, 16, FlowConfig::default());
    for lane in r.logf().lanes(Axis(2)) {
        assert!((lane[0] - 1.3f64.ln()).abs() < 1e-15);
    }
    let (grid, fiber) = build_grid(2, 8, 1.0, 16).unwrap();
    let err = encode_state(&get_entry("euclidean", &Params::new()).unwrap(), &grid, &fiber, FlowConfig::default());
    assert!(err.is_err());
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 16).unwrap();
    assert!(encode_state(&get_entry("funk-disk", &Params::new()).unwrap(), &grid, &fiber, FlowConfig::default()).is_err());
}

#[test]
fn quartic_round_trip() {
    // refined oracle: interpolate from 64 fiber samples, compare off-grid
    // against the closed form
    let q = QuarticMinkowski;
    let grid = BaseGrid::new(vec![8, 8], vec![2.0 * PI; 2]).unwrap();
    let fiber = FiberGrid::new(64).unwrap();
    let gf = GridFinsler::new(&sample_logf(&q, &grid, &fiber).unwrap(), &grid, &fiber).unwrap();
    let mut worst = 0.0f64;
    for k in 0..997 {
        let t = 2.0 * PI * k as f64 / 997.0;
        let y = [t.cos(), t.sin()];
        worst = worst.max((gf.eval(&[0.0, 0.0], &y) - q.eval(&[0.0, 0.0], &y)).abs());
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn flat_torus_is_stationary() {
    let mut s = state("euclidean", &[], 16, 16, FlowConfig::default());
    assert!(s.curvature_field().iter().all(|v| v.abs() < 1e-14));
    let mut rows: Vec<FlowDiagnostics> = Vec::new();
    let start = s.logf().clone();
    run_flow(&mut s, 100, &mut rows, None).unwrap();
    assert!(max_abs_diff(&start, s.logf()) <= 1e-12);
    assert_eq!(rows.len(), 101);
    for r in &rows {
        assert_eq!(r.volume, rows[0].volume);
        assert_eq!(r.i, rows[0].i);
        assert_eq!(r.max_abs_huu, rows[0].max_abs_huu);
    }
}

#[test]
fn dt_policy() {
    let s = state("euclidean", &[], 32, 16, FlowConfig::default());
    let h = 2.0 * PI / 32.0;
    assert!((s.dt_policy() / (0.25 * h * h / 4.0) - 1.0).abs() < 1e-12);
    let s2 = state("euclidean", &[], 64, 16, FlowConfig::default());
    assert!((s.dt_policy() / s2.dt_policy() - 4.0).abs() < 1e-12);
    let g = BaseGrid::new(vec![32, 32], vec![2.0 * PI; 2]).unwrap();
    assert!((stability_dt(&g, 0.5, 1.0) / (0.5 * h * h / 8.0) - 1.0).abs() < 1e-14);
    let (grid, fiber) = build_grid(2, 8, 2.0 * PI, 16).unwrap();
    let bad = FlowConfig {
        safety: 0.0,
        ..FlowConfig::default()
    };
    assert!(encode_state(&get_entry("euclidean", &Params::new()).unwrap(), &grid, &fiber, bad).is_err());
    let mut s = state("euclidean", &[], 8, 16, FlowConfig::default());
    assert!(s.step_with(1.0).is_err());
    assert!(s.step_with(-1e-3).is_err());
}

#[test]
fn conformal_curvature_field_matches_gauss() {
    let s = state("conformal-torus", &[("amp", 0.2)], 32, 16, FlowConfig::default());
    let c = ConformalTorus { amp: 0.2 };
    let mut worst = 0.0f64;
    for ((i, j, _), h) in s.curvature_field().indexed_iter() {
        let k = c.gauss_curvature(&[s.grid.coord(0, i), s.grid.coord(1, j)]);
        worst = worst.max((h - k).abs() / (1.0 + k.abs()));
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn randers_curvature_depends_on_direction() {
    let s = state("randers-torus", &[("b", 0.3), ("wave", 0.15)], 16, 32, FlowConfig::default());
    let spread = s
        .curvature_field()
        .lanes(Axis(2))
        .into_iter()
        .map(|l| l.iter().cloned().fold(f64::MIN, f64::max) - l.iter().cloned().fold(f64::MAX, f64::min))
        .fold(0.0f64, f64::max);
    // regression value of the largest fiber oscillation of H(u, u)
    assert!((spread - 1.117935361227596).abs() < 1e-9, "{spread}");
    let s = state("conformal-torus", &[], 16, 16, FlowConfig::default());
    for l in s.curvature_field().lanes(Axis(2)) {
        assert!(l.iter().all(|v| (v - l[0]).abs() < 1e-10));
    }
}

#[test]
fn uniform_sphere_mode_matches_exact_scaling() {
    let sphere = get_entry("sphere-patch", &params(&[("r", 1.0)])).unwrap().shared();
    let mut f = UniformFlow::new(sphere.clone(), vec![0.3, -0.2], false).unwrap();
    for _ in 0..20 {
        f.step(0.005, Stepper::Rk4).unwrap();
    }
    let phi2 = f.phi().powi(2);
    assert!((f.time - 0.1).abs() < 1e-14);
    assert!((phi2 - (1.0 - 2.0 * 0.1)).abs() < 1e-6, "{phi2}");
    let mut n = UniformFlow::new(sphere, vec![0.3, -0.2], true).unwrap();
    for _ in 0..10 {
        let before = n.log_phi;
        n.step(0.01, Stepper::Rk4).unwrap();
        assert!((n.log_phi - before).abs() <= 1e-10);
    }
}

#[test]
fn euler_and_rk4_agree_to_first_order() {
    let cfg = |stepper| FlowConfig {
        stepper,
        ..FlowConfig::default()
    };
    let mut gap = Vec::new();
    for dt in [4e-3, 2e-3] {
        let mut e = state("conformal-torus", &[], 16, 16, cfg(Stepper::Euler));
        let mut r = state("conformal-torus", &[], 16, 16, cfg(Stepper::Rk4));
        e.step_with(dt).unwrap();
        r.step_with(dt).unwrap();
        gap.push(max_abs_diff(e.logf(), r.logf()));
    }
    // local error of one Euler step is O(dt²)
    let order = (gap[0] / gap[1]).log2();
    assert!(order > 1.8 && order < 2.2, "{order}");
}

#[test]
fn rk4_self_convergence() {
    let run = |dt: f64, steps: usize| {
        let mut s = state(
            "conformal-torus",
            &[("amp", 0.4)],
            16,
            16,
            FlowConfig {
                dt: Some(dt),
                ..FlowConfig::default()
            },
        );
        for _ in 0..steps {
            s.step().unwrap();
        }
        s.logf().clone()
    };
    let t = 0.064;
    let reference = run(t / 32.0, 32);
    let e1 = max_abs_diff(&run(t / 4.0, 4), &reference);
    let e2 = max_abs_diff(&run(t / 8.0, 8), &reference);
    let order = (e1 / e2).log2();
    assert!(order >= 3.5, "order {order} ({e1:e}, {e2:e})");
}

#[test]
fn riemannian_states_stay_riemannian() {
    let mut s = state("conformal-torus", &[], 16, 16, FlowConfig::default());
    for _ in 0..10 {
        s.step().unwrap();
    }
    for l in s.logf().lanes(Axis(2)) {
        assert!(l.iter().all(|v| (v - l[0]).abs() < 1e-8));
    }
    assert!(s.diagnostics().unwrap().gem_residual < 1e-8);
}

#[test]
fn normalized_flow_preserves_volume() {
    let cfg = FlowConfig {
        normalized: true,
        ..FlowConfig::default()
    };
    let mut s = state("randers-torus", &[("b", 0.3), ("wave", 0.15)], 16, 32, cfg);
    let mut rows: Vec<FlowDiagnostics> = Vec::new();
    let run = run_flow(&mut s, 100, &mut rows, None).unwrap();
    assert!(run.failure.is_none());
    let v0 = rows[0].volume;
    let drift = rows.iter().map(|r| (r.volume - v0).abs() / v0).fold(0.0, f64::max);
    assert!(drift <= 1e-3, "{drift}");
    assert!(rows.iter().all(|r| r.min_eig_g > 0.0));
}

#[test]
fn normalized_conformal_flow_decays_curvature() {
    let cfg = FlowConfig {
        normalized: true,
        ..FlowConfig::default()
    };
    let mut s = state("conformal-torus", &[], 16, 16, cfg);
    let mut rows: Vec<FlowDiagnostics> = Vec::new();
    run_flow(&mut s, 50, &mut rows, None).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].max_abs_huu <= w[0].max_abs_huu + 1e-10);
    }
    assert!(rows[50].max_abs_huu < rows[0].max_abs_huu);
}

#[test]
fn csv_is_deterministic_and_sized() {
    let go = || {
        let mut s = state("randers-torus", &[("b", 0.3), ("wave", 0.15)], 8, 16, FlowConfig::default());
        let mut csv = CsvSink::default();
        run_flow(&mut s, 5, &mut csv, None).unwrap();
        csv.text
    };
    let a = go();
    assert_eq!(a, go());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[1].starts_with("0,0e0,"));
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let dir = std::env::temp_dir().join(format!("finsler-flow-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("state.json");
    let fresh = || state("randers-torus", &[("b", 0.3), ("wave", 0.15)], 8, 16, FlowConfig::default());
    let mut full = fresh();
    let mut rows_full: Vec<FlowDiagnostics> = Vec::new();
    run_flow(&mut full, 4, &mut rows_full, None).unwrap();

    let mut half = fresh();
    let mut rows: Vec<FlowDiagnostics> = Vec::new();
    run_flow(
        &mut half,
        2,
        &mut rows,
        Some(CheckpointPlan {
            every: 1,
            path: &path,
        }),
    )
    .unwrap();
    let mut resumed = FlowState::load(&path).unwrap();
    assert_eq!(resumed.step, 2);
    assert_eq!(resumed.logf(), half.logf());
    let mut rest: Vec<FlowDiagnostics> = Vec::new();
    run_flow(&mut resumed, 2, &mut rest, None).unwrap();
    assert_eq!(resumed.logf(), full.logf());
    assert_eq!(rest[2], rows_full[4]);

    let mut c = full.to_checkpoint();
    c.version = 99;
    assert!(FlowState::from_checkpoint(c).is_err());
    let mut c = full.to_checkpoint();
    c.logf.pop();
    assert!(FlowState::from_checkpoint(c).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

/// Rate `λ` of `−H(u, u)` on the mode `ε cos(k x₁) cos(m θ)` linearized at
/// the flat torus.
fn linear_rate(k: usize, m: usize) -> f64 {
    use finsler::grid::{grid_curvature, FiberCalculus};
    let (grid, fiber) = build_grid(2, 16, 2.0 * PI, 32).unwrap();
    let fc = FiberCalculus::new(&fiber);
    let mode = ndarray::Array3::from_shape_fn((16, 16, 32), |(i, _, t)| {
        1e-6 * (k as f64 * grid.coord(0, i)).cos() * (m as f64 * fiber.theta(t)).cos()
    });
    let h = grid_curvature(&mode, &grid, &fc, finsler::DerivMode::Spectral).unwrap().huu;
    let num: f64 = h.iter().zip(mode.iter()).map(|(a, b)| -a * b).sum();
    num / mode.iter().map(|b| b * b).sum::<f64>()
}

#[test]
fn fiber_modes_above_two_are_anti_diffusive() {
    // m = 0 is the heat equation ∂t u = Δu
    for k in [1, 2, 4] {
        assert!((linear_rate(k, 0) + (k * k) as f64).abs() < 1e-6);
    }
    // measured symbol k²(m²/4 − 1) for m ≥ 2
    for (k, m) in [(1, 4), (2, 3), (2, 6), (4, 8)] {
        let expect = (k * k) as f64 * ((m * m) as f64 / 4.0 - 1.0);
        assert!((linear_rate(k, m) - expect).abs() < 1e-4 * expect.max(1.0), "k={k} m={m}");
    }
    // without the fiber filter, roundoff in a Riemannian state is amplified
    let mut s = state(
        "conformal-torus",
        &[],
        16,
        16,
        FlowConfig {
            fiber_modes: None,
            ..FlowConfig::default()
        },
    );
    let mut failed = false;
    for _ in 0..40 {
        if s.step().is_err() {
            failed = true;
            break;
        }
    }
    let spread = s
        .logf()
        .lanes(Axis(2))
        .into_iter()
        .map(|l| l.iter().map(|v| (v - l[0]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    assert!(failed || spread > 1e-6, "{spread}");
}
