//! Scalar curvature flow `∂t log F = −(H(u, u) − c)` on periodic surfaces.
//!
//! The state is the profile `ℓ(x, θ) = log F(x, e(θ))` on a base × fiber
//! grid, so every state is a Finsler structure `F = |y| e^{ℓ}` by
//! construction. Steps are explicit (Euler or classical RK4) on the method
//! of lines system; a step that loses convexity is retried with half the
//! time step.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::chart::{BaseGrid, DerivMode, FiberGrid};
use crate::curvature::ricci_directional;
use crate::error::{FinslerError, Result};
use crate::grid::{self, FiberCalculus, GridFinsler, SymField};
use crate::measure::{fields_from_logf, functional_from_fields, CFun, CurvatureFields, MeasureField};
use crate::numerics::pairwise_sum;
use crate::structure::{Chart, FinslerStructure, Scaled};
use crate::zoo::ZooEntry;

pub const CSV_HEADER: &str = "step,time,V,I,I_norm,c,min_eig_g,max_abs_Huu,gem_residual";
pub const CHECKPOINT_FORMAT: &str = "finsler-flow-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MAX_RETRIES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepper {
    Euler,
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// Subtract the average `c(t)` of `H(u, u)` so that `V` is preserved.
    pub normalized: bool,
    pub stepper: Stepper,
    pub safety: f64,
    pub deriv: DerivMode,
    /// Fixed time step instead of the adaptive policy.
    pub dt: Option<f64>,
    /// Keep only the fiber Fourier modes `|m| ≤ fiber_modes` of the
    /// velocity; `None` evolves every mode.
    pub fiber_modes: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            normalized: false,
            stepper: Stepper::Rk4,
            safety: 0.25,
            deriv: DerivMode::Spectral,
            dt: None,
            fiber_modes: Some(2),
        }
    }
}

impl FlowConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.safety > 0.0) || !self.safety.is_finite() {
            return Err(FinslerError::InvalidParameter(format!("safety must be positive, got {}", self.safety)));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(FinslerError::InvalidParameter(format!("dt must be positive, got {dt}")));
            }
        }
        Ok(())
    }
}

/// One row of the diagnostics trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowDiagnostics {
    pub step: usize,
    pub time: f64,
    pub volume: f64,
    /// `I = ∫ H̃ η`.
    pub i: f64,
    pub i_normalized: f64,
    /// `∫ H(u, u) η / V`.
    pub c: f64,
    pub min_eig_g: f64,
    pub max_abs_huu: f64,
    pub gem_residual: f64,
    pub accepted: bool,
}

impl FlowDiagnostics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.time,
            self.volume,
            self.i,
            self.i_normalized,
            self.c,
            self.min_eig_g,
            self.max_abs_huu,
            self.gem_residual
        )
    }
}

#[derive(Debug, Clone)]
struct Snapshot {
    measure: MeasureField,
    fields: CurvatureFields,
    c: f64,
}

impl Snapshot {
    fn new(logf: &Array3<f64>, grid: &BaseGrid, fiber: &FiberGrid, deriv: DerivMode) -> Result<Self> {
        let (measure, fields) = fields_from_logf(logf, grid, fiber, deriv)?;
        let c = weighted_mean(&fields.ricci_directional, &measure.rho);
        Ok(Snapshot { measure, fields, c })
    }
}

fn weighted_mean(f: &Array3<f64>, rho: &Array3<f64>) -> f64 {
    let prod: Vec<f64> = Zip::from(f).and(rho).map_collect(|a, b| a * b).into_iter().collect();
    pairwise_sum(&prod) / pairwise_sum(rho.as_slice().expect("standard layout"))
}

/// Evolving surface structure `F = |y| e^{ℓ}`.
#[derive(Debug, Clone)]
pub struct FlowState {
    logf: Array3<f64>,
    pub grid: BaseGrid,
    pub fiber: FiberGrid,
    pub time: f64,
    pub step: usize,
    pub config: FlowConfig,
    fc: FiberCalculus,
    snapshot: Snapshot,
}

impl FlowState {
    pub fn new(logf: Array3<f64>, grid: BaseGrid, fiber: FiberGrid, config: FlowConfig) -> Result<Self> {
        config.check()?;
        if grid.dim() != 2 {
            return Err(FinslerError::UnsupportedDimension(grid.dim()));
        }
        let snapshot = Snapshot::new(&logf, &grid, &fiber, config.deriv)?;
        Ok(FlowState {
            fc: FiberCalculus::new(&fiber),
            logf,
            grid,
            fiber,
            time: 0.0,
            step: 0,
            config,
            snapshot,
        })
    }

    pub fn logf(&self) -> &Array3<f64> {
        &self.logf
    }

    pub fn measure(&self) -> &MeasureField {
        &self.snapshot.measure
    }

    pub fn fields(&self) -> &CurvatureFields {
        &self.snapshot.fields
    }

    /// The current structure as a pointwise evaluator.
    pub fn structure(&self) -> Result<GridFinsler> {
        GridFinsler::new(&self.logf, &self.grid, &self.fiber)
    }

    /// `H(u, u)` on the grid.
    pub fn curvature_field(&self) -> &Array3<f64> {
        &self.snapshot.fields.ricci_directional
    }

    /// Largest `|λ|` of `g⁻¹ − I` over the nodes: the principal coefficient
    /// of the flow is bounded by one plus this number.
    pub fn premultiplier(&self) -> f64 {
        let gi = grid::inverse(&self.snapshot.measure.metric);
        let mut worst = 0.0f64;
        Zip::from(&gi[0]).and(&gi[1]).and(&gi[2]).for_each(|&a, &b, &d| {
            let (a, d) = (a - 1.0, d - 1.0);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            worst = worst.max((mid + rad).abs()).max((mid - rad).abs());
        });
        worst
    }

    /// `dt = safety · h² / (2n (1 + premultiplier))`.
    pub fn dt_policy(&self) -> f64 {
        stability_dt(&self.grid, self.config.safety, self.premultiplier())
    }

    fn rate(&self, logf: &Array3<f64>) -> Result<Array3<f64>> {
        let gc = grid::grid_curvature(logf, &self.grid, &self.fc, self.config.deriv)?;
        let c = if self.config.normalized {
            weighted_mean(&gc.huu, &grid::liouville_from_logf(logf, &self.fc))
        } else {
            0.0
        };
        Ok(self.filter(gc.huu.mapv(|h| c - h)))
    }

    fn cached_rate(&self) -> Array3<f64> {
        let c = if self.config.normalized { self.snapshot.c } else { 0.0 };
        self.filter(self.snapshot.fields.ricci_directional.mapv(|h| c - h))
    }

    fn filter(&self, rate: Array3<f64>) -> Array3<f64> {
        match self.config.fiber_modes {
            Some(keep) if 2 * keep < self.fiber.count => self.fc.low_pass(&rate, keep),
            _ => rate,
        }
    }

    fn advance(&self, dt: f64) -> Result<Array3<f64>> {
        let k1 = self.cached_rate();
        match self.config.stepper {
            Stepper::Euler => Ok(&self.logf + &(k1 * dt)),
            Stepper::Rk4 => {
                let k2 = self.rate(&(&self.logf + &(&k1 * (0.5 * dt))))?;
                let k3 = self.rate(&(&self.logf + &(&k2 * (0.5 * dt))))?;
                let k4 = self.rate(&(&self.logf + &(&k3 * dt)))?;
                let mut out = self.logf.clone();
                Zip::from(&mut out)
                    .and(&k1)
                    .and(&k2)
                    .and(&k3)
                    .and(&k4)
                    .for_each(|o, a, b, c, d| *o += dt / 6.0 * (a + 2.0 * b + 2.0 * c + d));
                Ok(out)
            }
        }
    }

    /// One explicit step of size `dt`. On convexity loss the step is retried
    /// with `dt/2` up to [`MAX_RETRIES`] times.
    pub fn step_with(&mut self, dt: f64) -> Result<f64> {
        let bound = stability_dt(&self.grid, 1.0, self.premultiplier());
        if !(dt > 0.0) || dt > bound {
            return Err(FinslerError::InvalidParameter(format!(
                "dt = {dt:e} outside (0, {bound:e}] (stability bound)"
            )));
        }
        let mut dt = dt;
        let mut last = String::new();
        for _ in 0..=MAX_RETRIES {
            let attempt = self
                .advance(dt)
                .and_then(|next| Snapshot::new(&next, &self.grid, &self.fiber, self.config.deriv).map(|s| (next, s)));
            match attempt {
                Ok((next, snapshot)) => {
                    self.logf = next;
                    self.snapshot = snapshot;
                    self.time += dt;
                    self.step += 1;
                    return Ok(dt);
                }
                Err(e) if e.is_numerical() => {
                    last = e.to_string();
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        Err(FinslerError::StepFailed {
            retries: MAX_RETRIES,
            time: self.time,
            reason: last,
        })
    }

    /// One step with the configured fixed `dt` or the adaptive policy.
    pub fn step(&mut self) -> Result<f64> {
        let dt = self.config.dt.unwrap_or_else(|| self.dt_policy());
        self.step_with(dt)
    }

    pub fn diagnostics(&self) -> Result<FlowDiagnostics> {
        let s = &self.snapshot;
        let rep = functional_from_fields(&s.measure, &s.fields, &CFun::Zero)?;
        Ok(FlowDiagnostics {
            step: self.step,
            time: self.time,
            volume: rep.volume,
            i: rep.i,
            i_normalized: rep.i_normalized,
            c: s.c,
            min_eig_g: grid::min_eigenvalue(&s.measure.metric).0,
            max_abs_huu: s.fields.ricci_directional.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            gem_residual: s.fields.gem_residual.iter().fold(0.0f64, |m, v| m.max(*v)),
            accepted: true,
        })
    }

    /// Largest relative gap `‖2H̃_ij − H(u, u) g_ij‖ / ‖H(u, u) g_ij‖`
    /// between the metric velocity of the scalar flow (`∂t g = −2H̃_ij`) and
    /// the tensor form `−H(u, u) g_ij`.
    pub fn tensor_form_mismatch(&self) -> f64 {
        let s = &self.snapshot;
        let huu = &s.fields.ricci_directional;
        let ric = huu / &s.measure.radius.mapv(|r| r * r);
        let (az, _) = grid::akbar_zadeh(&ric, &s.measure.metric, &self.fc);
        let g = &s.measure.metric;
        let diff: SymField = [0, 1, 2].map(|c| &az[c] * 2.0 - &(&g[c] * huu));
        let tensor: SymField = [0, 1, 2].map(|c| &g[c] * huu);
        let gi = grid::inverse(g);
        let norm = |t: &SymField| {
            let q = |a: &Array3<f64>, b: &Array3<f64>| a * b;
            // tr(g⁻¹ t g⁻¹ t) for symmetric 2x2
            let m00 = q(&gi[0], &t[0]) + q(&gi[1], &t[1]);
            let m01 = q(&gi[0], &t[1]) + q(&gi[1], &t[2]);
            let m10 = q(&gi[1], &t[0]) + q(&gi[2], &t[1]);
            let m11 = q(&gi[1], &t[1]) + q(&gi[2], &t[2]);
            let tr = &m00 * &m00 + &(&m01 * &m10) * 2.0 + &m11 * &m11;
            pairwise_sum(&tr.mapv(|v| v.max(0.0)).into_raw_vec_and_offset().0).sqrt()
        };
        let denom = norm(&tensor);
        if denom == 0.0 {
            return norm(&diff);
        }
        norm(&diff) / denom
    }

    /// Serialize to the versioned checkpoint record.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            base_counts: self.grid.counts.clone(),
            base_lengths: self.grid.lengths.clone(),
            fiber_count: self.fiber.count,
            time: self.time,
            step: self.step,
            config: self.config.clone(),
            logf: self.logf.iter().copied().collect(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(FinslerError::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                c.format, c.version
            )));
        }
        let grid = BaseGrid::new(c.base_counts, c.base_lengths)?;
        let fiber = FiberGrid::new(c.fiber_count)?;
        if grid.dim() != 2 {
            return Err(FinslerError::Checkpoint("checkpoint base grid must be 2-D".into()));
        }
        let shape = (grid.counts[0], grid.counts[1], fiber.count);
        let logf = Array3::from_shape_vec(shape, c.logf)
            .map_err(|e| FinslerError::Checkpoint(format!("logF array does not match the grid: {e}")))?;
        let mut state = FlowState::new(logf, grid, fiber, c.config)?;
        state.time = c.time;
        state.step = c.step;
        Ok(state)
    }

    /// Write the checkpoint atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| FinslerError::Checkpoint(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| FinslerError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(c)
    }
}

pub fn stability_dt(grid: &BaseGrid, safety: f64, premultiplier: f64) -> f64 {
    let h = grid.min_spacing();
    safety * h * h / (2.0 * grid.dim() as f64 * (1.0 + premultiplier))
}

/// Write `bytes` to `<path>.tmp` and rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Flow state file: grid metadata and `ℓ` flattened row-major
/// (`x₁` outer, `x₂` middle, `θ` inner).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub base_counts: Vec<usize>,
    pub base_lengths: Vec<f64>,
    pub fiber_count: usize,
    pub time: f64,
    pub step: usize,
    pub config: FlowConfig,
    pub logf: Vec<f64>,
}

/// Sample a periodic zoo entry into a flow state.
pub fn encode_state(entry: &ZooEntry, grid: &BaseGrid, fiber: &FiberGrid, config: FlowConfig) -> Result<FlowState> {
    let lengths = match entry.chart() {
        Chart::Torus { lengths } => lengths,
        other => {
            return Err(FinslerError::InvalidParameter(format!(
                "{} lives on a {} chart; grid flows need a periodic chart",
                entry.name,
                other.name()
            )))
        }
    };
    if lengths.iter().zip(&grid.lengths).any(|(a, b)| (a - b).abs() > 1e-12 * a) {
        return Err(FinslerError::GridMismatch(format!(
            "grid lengths {:?} do not match the chart periods {:?}",
            grid.lengths, lengths
        )));
    }
    let logf = grid::sample_logf(entry.structure(), grid, fiber)?;
    FlowState::new(logf, grid.clone(), fiber.clone(), config)
}

/// Receives one diagnostics row per state.
pub trait FlowSink {
    fn record(&mut self, d: &FlowDiagnostics) -> Result<()>;
}

impl FlowSink for Vec<FlowDiagnostics> {
    fn record(&mut self, d: &FlowDiagnostics) -> Result<()> {
        self.push(d.clone());
        Ok(())
    }
}

/// CSV text with the fixed diagnostics header.
#[derive(Debug, Clone)]
pub struct CsvSink {
    pub text: String,
}

impl Default for CsvSink {
    fn default() -> Self {
        CsvSink {
            text: format!("{CSV_HEADER}\n"),
        }
    }
}

impl FlowSink for CsvSink {
    fn record(&mut self, d: &FlowDiagnostics) -> Result<()> {
        writeln!(self.text, "{}", d.csv_row()).expect("writing to a String");
        Ok(())
    }
}

/// Checkpoint schedule for [`run_flow`].
#[derive(Debug, Clone)]
pub struct CheckpointPlan<'a> {
    pub every: usize,
    pub path: &'a Path,
}

/// Result of a run: accepted steps and the error that truncated it, if any.
#[derive(Debug)]
pub struct FlowRun {
    pub steps: usize,
    pub failure: Option<FinslerError>,
}

/// Record the initial state, then take `steps` steps recording each. The
/// checkpoint (if planned) always ends up holding the last accepted state.
pub fn run_flow(
    state: &mut FlowState,
    steps: usize,
    sink: &mut dyn FlowSink,
    checkpoint: Option<CheckpointPlan<'_>>,
) -> Result<FlowRun> {
    if steps == 0 {
        return Err(FinslerError::InvalidParameter("steps must be at least 1".into()));
    }
    sink.record(&state.diagnostics()?)?;
    for done in 0..steps {
        if let Err(e) = state.step() {
            if e.is_numerical() {
                if let Some(plan) = &checkpoint {
                    state.save(plan.path)?;
                }
                return Ok(FlowRun {
                    steps: done,
                    failure: Some(e),
                });
            }
            return Err(e);
        }
        sink.record(&state.diagnostics()?)?;
        if let Some(plan) = &checkpoint {
            if plan.every > 0 && (done + 1) % plan.every == 0 {
                state.save(plan.path)?;
            }
        }
    }
    if let Some(plan) = &checkpoint {
        state.save(plan.path)?;
    }
    Ok(FlowRun { steps, failure: None })
}

/// Spatially uniform flow of `F_t = φ(t) F₀` at a single point, with
/// curvature from the pointwise pipeline of the scaled structure. The rate
/// of `log φ` is the Liouville-weighted fiber average of `H(u, u)`.
#[derive(Clone)]
pub struct UniformFlow {
    pub base: Arc<dyn FinslerStructure>,
    pub x: Vec<f64>,
    pub log_phi: f64,
    pub time: f64,
    pub normalized: bool,
    pub fiber: FiberGrid,
}

impl UniformFlow {
    pub fn new(base: Arc<dyn FinslerStructure>, x: Vec<f64>, normalized: bool) -> Result<Self> {
        if base.dim() != 2 {
            return Err(FinslerError::UnsupportedDimension(base.dim()));
        }
        Ok(UniformFlow {
            base,
            x,
            log_phi: 0.0,
            time: 0.0,
            normalized,
            fiber: FiberGrid::new(16)?,
        })
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    /// `(H̄, c)` for the scaled structure `e^{log φ} F₀` at `x`.
    fn averages(&self, log_phi: f64) -> Result<(f64, f64)> {
        let fs = Scaled {
            inner: self.base.clone(),
            factor: log_phi.exp(),
        };
        let mut h = Vec::with_capacity(self.fiber.count);
        let mut rho = Vec::with_capacity(self.fiber.count);
        for t in self.fiber.angles() {
            h.push(ricci_directional(&fs, &self.x, &[t.cos(), t.sin()])?);
            rho.push(crate::measure::liouville_density(&fs, &self.x, t)?);
        }
        let hr: Vec<f64> = h.iter().zip(&rho).map(|(a, b)| a * b).collect();
        let mean = pairwise_sum(&hr) / pairwise_sum(&rho);
        Ok((mean, if self.normalized { mean } else { 0.0 }))
    }

    fn rate(&self, log_phi: f64) -> Result<f64> {
        let (h, c) = self.averages(log_phi)?;
        Ok(c - h)
    }

    pub fn step(&mut self, dt: f64, stepper: Stepper) -> Result<()> {
        let l = self.log_phi;
        self.log_phi = match stepper {
            Stepper::Euler => l + dt * self.rate(l)?,
            Stepper::Rk4 => {
                let k1 = self.rate(l)?;
                let k2 = self.rate(l + 0.5 * dt * k1)?;
                let k3 = self.rate(l + 0.5 * dt * k2)?;
                let k4 = self.rate(l + dt * k3)?;
                l + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
        self.time += dt;
        Ok(())
    }
}
