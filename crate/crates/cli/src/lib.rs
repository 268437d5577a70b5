//! `finsler` command line: structure validation, pointwise curvature
//! reports, total curvature functional, variational identity checks,
//! curvature flows and the metric zoo.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage or configuration
//! error. Errors are written to stderr as one JSON record.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use finsler::connections::{nonlinear_connection, spray, Pointwise};
use finsler::flow::{self, encode_state, run_flow, CheckpointPlan, CsvSink, FlowConfig, FlowState, Stepper};
use finsler::measure::{functional_i, CFun, CurvatureSource};
use finsler::structure::{cartan_tensor, fundamental_tensor, validate_structure, ValidityTolerances};
use finsler::variations::{
    adjointness_residual, conformal_variation, family_variation, trig_vector_field, variation_residuals, Generator,
    MetricPath, TrigSeries,
};
use finsler::zoo::{self, get_entry, Params, ZooEntry};
use finsler::{BaseGrid, BaseMode, Chart, DerivMode, FiberGrid, FinslerError, FinslerStructure};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Every option of every subcommand; read from the JSON config file and
/// overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub metric: Option<String>,
    pub params: BTreeMap<String, f64>,
    /// `[N₁, N₂, N_θ]`.
    pub grid: Option<Vec<usize>>,
    pub x: Option<Vec<f64>>,
    pub theta: Option<f64>,
    pub y: Option<Vec<f64>>,
    /// Finite-difference step for base partials; absent means analytic.
    pub fd_step: Option<f64>,
    pub c: Option<f64>,
    /// `pointwise`, `grid-fd` or `grid-spectral`.
    pub source: Option<String>,
    pub samples: Option<usize>,
    pub tol: Option<f64>,
    pub steps: Option<usize>,
    pub normalized: Option<bool>,
    pub stepper: Option<Stepper>,
    pub dt: Option<f64>,
    pub safety: Option<f64>,
    pub deriv: Option<DerivMode>,
    pub fiber_modes: Option<usize>,
    pub unfiltered: Option<bool>,
    pub checkpoint_every: Option<usize>,
    pub resume: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(name = "finsler", version, about = "Numerical Finsler geometry on low-dimensional charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sampled structure checks and zoo reference comparison.
    Validate(Opts),
    /// Metric, spray and curvature at one point of TM∖0.
    Report(Opts),
    /// Indicatrix volume and total curvature on a periodic surface grid.
    Functional(Opts),
    /// Adjointness and first-variation residuals.
    VerifyIdentities(Opts),
    /// Scalar curvature flow with CSV diagnostics and checkpoints.
    Flow(Opts),
    /// List or check the named structures.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
}

#[derive(Debug, Subcommand)]
enum ZooAction {
    List,
    Check(Opts),
}

#[derive(Debug, Args, Default)]
struct Opts {
    /// JSON config file with `RunConfig` field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Zoo entry name.
    #[arg(long)]
    metric: Option<String>,
    /// Metric parameter `key=value`, repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// `N1,N2,Ntheta`.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Base point `x1,x2`.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    /// Direction angle; `y = (cos θ, sin θ)`.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Direction `y1,y2`.
    #[arg(long, allow_hyphen_values = true)]
    y: Option<String>,
    /// Finite-difference step for base partials.
    #[arg(long)]
    fd_step: Option<f64>,
    /// Constant in the curvature integrand.
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    /// `pointwise`, `grid-fd` or `grid-spectral`.
    #[arg(long)]
    source: Option<String>,
    /// Sample count for checks.
    #[arg(long)]
    samples: Option<usize>,
    /// Check tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Number of flow steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Subtract the mean curvature to hold the volume fixed.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    normalized: Option<bool>,
    /// `euler` or `rk4`.
    #[arg(long)]
    stepper: Option<String>,
    /// Fixed time step; default from the stability bound.
    #[arg(long)]
    dt: Option<f64>,
    /// Factor on the stability bound.
    #[arg(long)]
    safety: Option<f64>,
    /// `fd` or `spectral`.
    #[arg(long)]
    deriv: Option<String>,
    /// Highest fiber mode kept in the velocity.
    #[arg(long)]
    fiber_modes: Option<usize>,
    /// Evolve every fiber mode of the velocity.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    unfiltered: Option<bool>,
    /// Checkpoint interval in steps.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Checkpoint to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides `FINSLER_THREADS`.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(FinslerError),
    /// A check ran to completion and failed.
    Failed(String),
}

impl From<FinslerError> for CliError {
    fn from(e: FinslerError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numerical() => 1,
            CliError::Core(FinslerError::Io(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Failed(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(FinslerError::Io(_)) => "io",
            CliError::Core(_) => "config",
            CliError::Failed(_) => "check-failed",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }

    pub fn record(&self) -> Value {
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.message(),
                "exit_code": self.exit_code(),
            }
        })
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("cannot parse {what} '{s}'"))))
        .collect()
}

fn parse_deriv(s: &str) -> CliResult<DerivMode> {
    match s {
        "fd" | "finite-difference" => Ok(DerivMode::FiniteDifference),
        "spectral" => Ok(DerivMode::Spectral),
        _ => Err(usage(format!("unknown derivative mode '{s}' (fd | spectral)"))),
    }
}

fn parse_stepper(s: &str) -> CliResult<Stepper> {
    match s {
        "euler" => Ok(Stepper::Euler),
        "rk4" => Ok(Stepper::Rk4),
        _ => Err(usage(format!("unknown stepper '{s}' (euler | rk4)"))),
    }
}

impl Opts {
    /// Config file (if any) with the flags applied on top.
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = Some(v.clone());
                }
            };
        }
        set!(metric);
        set!(theta);
        set!(fd_step);
        set!(c);
        set!(source);
        set!(samples);
        set!(tol);
        set!(steps);
        set!(normalized);
        set!(dt);
        set!(safety);
        set!(fiber_modes);
        set!(unfiltered);
        set!(checkpoint_every);
        set!(resume);
        set!(out);
        set!(threads);
        for p in &self.params {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| usage(format!("parameter '{p}' is not KEY=VALUE")))?;
            let v: f64 = v.parse().map_err(|_| usage(format!("parameter '{p}' has a non-numeric value")))?;
            cfg.params.insert(k.to_string(), v);
        }
        if let Some(g) = &self.grid {
            cfg.grid = Some(parse_list(g, "grid")?);
        }
        if let Some(x) = &self.x {
            cfg.x = Some(parse_list(x, "x")?);
        }
        if let Some(y) = &self.y {
            cfg.y = Some(parse_list(y, "y")?);
        }
        if let Some(s) = &self.stepper {
            cfg.stepper = Some(parse_stepper(s)?);
        }
        if let Some(d) = &self.deriv {
            cfg.deriv = Some(parse_deriv(d)?);
        }
        Ok(cfg)
    }
}

impl RunConfig {
    fn entry(&self) -> CliResult<ZooEntry> {
        let name = self.metric.as_deref().ok_or_else(|| usage("--metric is required"))?;
        let params: Params = self.params.clone();
        Ok(get_entry(name, &params)?)
    }

    fn tol(&self, default: f64) -> CliResult<f64> {
        let t = self.tol.unwrap_or(default);
        if !(t > 0.0) {
            return Err(usage(format!("tolerance must be positive, got {t}")));
        }
        Ok(t)
    }

    /// Base and fiber grids on the periodic chart of `chart`.
    fn grids(&self, chart: &Chart) -> CliResult<(BaseGrid, FiberGrid)> {
        let g = self.grid.as_ref().ok_or_else(|| usage("--grid N1,N2,Ntheta is required"))?;
        if g.len() != 3 {
            return Err(usage(format!("--grid needs three counts N1,N2,Ntheta, got {g:?}")));
        }
        let lengths = match chart {
            Chart::Torus { lengths } => lengths.clone(),
            other => {
                return Err(usage(format!(
                    "grid computations need a periodic chart; this metric lives on a {} chart",
                    other.name()
                )))
            }
        };
        let base = BaseGrid::new(vec![g[0], g[1]], lengths)?;
        let fiber = FiberGrid::new(g[2])?;
        Ok((base, fiber))
    }

    fn base_mode(&self) -> CliResult<BaseMode> {
        match self.fd_step {
            None => Ok(BaseMode::Analytic),
            Some(step) if step > 0.0 => Ok(BaseMode::FiniteDifference { step }),
            Some(step) => Err(usage(format!("--fd-step must be positive, got {step}"))),
        }
    }

    fn curvature_source(&self) -> CliResult<CurvatureSource> {
        match self.source.as_deref().unwrap_or("pointwise") {
            "pointwise" => Ok(CurvatureSource::Pointwise(self.base_mode()?)),
            "grid-fd" => Ok(CurvatureSource::Grid(DerivMode::FiniteDifference)),
            "grid-spectral" => Ok(CurvatureSource::Grid(DerivMode::Spectral)),
            s => Err(usage(format!("unknown source '{s}' (pointwise | grid-fd | grid-spectral)"))),
        }
    }

    fn flow_config(&self) -> FlowConfig {
        let d = FlowConfig::default();
        FlowConfig {
            normalized: self.normalized.unwrap_or(d.normalized),
            stepper: self.stepper.unwrap_or(d.stepper),
            safety: self.safety.unwrap_or(d.safety),
            deriv: self.deriv.unwrap_or(d.deriv),
            dt: self.dt.or(d.dt),
            fiber_modes: if self.unfiltered.unwrap_or(false) {
                None
            } else {
                self.fiber_modes.or(d.fiber_modes)
            },
        }
    }
}

fn manifest(command: &str, cfg: &RunConfig, tolerances: Value) -> Value {
    json!({
        "tool": "finsler",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": finsler::VERSION,
        "command": command,
        "config": cfg,
        "tolerances": tolerances,
    })
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn matrix(t: &finsler::SymTensor2) -> Vec<Vec<f64>> {
    let n = t.dim();
    (0..n).map(|i| (0..n).map(|j| t.get(i, j)).collect()).collect()
}

fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    flow::write_atomic(&path, bytes)?;
    Ok(path)
}

/// Print the record to stdout and, with `--out`, store it with a manifest.
fn emit(command: &str, cfg: &RunConfig, record: Value, tolerances: Value) -> CliResult<String> {
    let text = serde_json::to_string_pretty(&record).expect("JSON values serialize") + "\n";
    if let Some(dir) = &cfg.out {
        write_output(dir, &format!("{command}.json"), text.as_bytes())?;
        let m = serde_json::to_string_pretty(&manifest(command, cfg, tolerances)).expect("serialize") + "\n";
        write_output(dir, "manifest.json", m.as_bytes())?;
    }
    Ok(text)
}

fn validate(cfg: &RunConfig) -> CliResult<String> {
    let entry = cfg.entry()?;
    let samples = cfg.samples.unwrap_or(64);
    let tol = ValidityTolerances::default();
    let ref_tol = cfg.tol(1e-5)?;
    let validity = validate_structure(entry.structure(), samples, &tol)?;
    let references = zoo::reference_check(&entry, samples.min(24), ref_tol)?;
    let passed = validity.all_passed() && references.all_passed();
    let record = json!({
        "command": "validate",
        "metric": entry.name,
        "params": entry.params,
        "validity": validity,
        "references": references,
        "passed": passed,
    });
    let tolerances = json!({"homogeneity": tol.homogeneity, "positivity": tol.positivity, "references": ref_tol});
    let text = emit("validate", cfg, record, tolerances)?;
    if !passed {
        print!("{text}");
        return Err(CliError::Failed(format!("{} failed validation", entry.name)));
    }
    Ok(text)
}

fn report(cfg: &RunConfig) -> CliResult<String> {
    let entry = cfg.entry()?;
    let fs = entry.structure();
    let n = fs.dim();
    let x = cfg.x.clone().ok_or_else(|| usage("--x is required"))?;
    if x.len() != n {
        return Err(usage(format!("--x needs {n} coordinates, got {}", x.len())));
    }
    if !fs.chart().contains(&x) {
        return Err(usage(format!("x = {x:?} is outside the {} chart", fs.chart().name())));
    }
    let y = match (&cfg.y, cfg.theta) {
        (Some(y), _) => y.clone(),
        (None, Some(t)) if n == 2 => vec![t.cos(), t.sin()],
        (None, Some(_)) => return Err(usage("--theta only applies to surfaces; give --y")),
        (None, None) => return Err(usage("a direction is required: --theta or --y")),
    };
    if y.len() != n {
        return Err(usage(format!("--y needs {n} components, got {}", y.len())));
    }
    let mode = cfg.base_mode()?;
    let c = cfg.c.unwrap_or(0.0);
    let g = fundamental_tensor(fs, &x, &y)?;
    let cartan = cartan_tensor(fs, &x, &y)?;
    let b = Pointwise::with_mode(fs, mode).curvature_bundle(&x, &y, &|_| c)?;
    let record = json!({
        "command": "report",
        "metric": entry.name,
        "params": entry.params,
        "x": x,
        "y": y,
        "base_mode": mode,
        "F": fs.eval(&x, &y),
        "g": matrix(&g),
        "min_eig_g": g.min_eigenvalue(),
        "cartan_max_abs": cartan.max_abs(),
        "spray": spray(fs, &x, &y)?,
        "nonlinear_connection": nonlinear_connection(fs, &x, &y)?,
        "H_uu": b.ricci_directional,
        "H_tilde": b.h_tilde,
        "H_hat": b.h_hat,
        "c": c,
        "ricci": matrix(&b.ricci),
        "akbar_zadeh_ricci": matrix(&b.akbar_zadeh_ricci),
    });
    emit("report", cfg, record, json!({}))
}

fn functional(cfg: &RunConfig) -> CliResult<String> {
    let entry = cfg.entry()?;
    let (grid, fiber) = cfg.grids(&entry.chart())?;
    let c_fun = match cfg.c {
        Some(c) => CFun::Constant(c),
        None => CFun::Zero,
    };
    let source = cfg.curvature_source()?;
    let rep = functional_i(entry.structure(), &c_fun, &grid, &fiber, source)?;
    let record = json!({
        "command": "functional",
        "metric": entry.name,
        "params": entry.params,
        "source": cfg.source.as_deref().unwrap_or("pointwise"),
        "c": cfg.c.unwrap_or(0.0),
        "report": rep,
    });
    emit("functional", cfg, record, json!({}))
}

fn verify_identities(cfg: &RunConfig) -> CliResult<String> {
    let entry = cfg.entry()?;
    let (grid, fiber) = cfg.grids(&entry.chart())?;
    let tol = cfg.tol(1e-3)?;
    let functional_tol = 1e-2;
    let fs: Arc<dyn FinslerStructure> = entry.shared();
    let field = trig_vector_field(0.3, -0.2);
    let drift = vec![
        TrigSeries::cosine(0.1, &[1.0, 0.0], 0.3),
        TrigSeries::cosine(0.05, &[0.0, 1.0], 0.0).plus(TrigSeries::constant(0.02)),
    ];
    let k = TrigSeries::cosine(0.3, &[1.0, 1.0], -std::f64::consts::FRAC_PI_2)
        .plus(TrigSeries::cosine(0.3, &[1.0, -1.0], -std::f64::consts::FRAC_PI_2));
    let adj_family = adjointness_residual(&field, &family_variation(&drift, fs.as_ref(), &grid, &fiber)?, fs.as_ref())?;
    let k_adj = TrigSeries::cosine(0.3, &[1.0, 1.0], 0.2);
    let adj_conformal =
        adjointness_residual(&field, &conformal_variation(&k_adj, fs.as_ref(), &grid, &fiber)?, fs.as_ref())?;
    let step = 1e-4;
    let samples = cfg.samples.unwrap_or(8);
    let family = variation_residuals(
        &MetricPath {
            base: fs.clone(),
            generator: Generator::Randers { beta: drift },
        },
        &grid,
        &fiber,
        step,
        samples,
    )?;
    let conformal = variation_residuals(
        &MetricPath {
            base: fs.clone(),
            generator: Generator::Conformal { k },
        },
        &grid,
        &fiber,
        step,
        samples,
    )?;
    let checks = [
        ("adjointness_family", adj_family.residual, tol),
        ("adjointness_conformal", adj_conformal.residual, tol),
        ("volume_trace", family.volume_trace.residual, tol),
        ("volume_directional", family.volume_directional.residual, tol),
        ("density", family.density_residual, tol),
        ("connection", family.connection_residual, tol),
        (
            "conformal_functional",
            conformal.functional.map(|f| f.residual).unwrap_or(f64::NAN),
            functional_tol,
        ),
    ];
    let rows: Vec<Value> = checks
        .iter()
        .map(|(name, r, t)| json!({"check": name, "residual": r, "tolerance": t, "passed": *r <= *t}))
        .collect();
    let record = json!({
        "command": "verify-identities",
        "metric": entry.name,
        "params": entry.params,
        "checks": rows,
        "adjointness": {"family": adj_family, "conformal": adj_conformal},
        "family_path": family,
        "conformal_path": conformal,
        "all_passed": checks.iter().all(|(_, r, t)| r <= t),
    });
    emit("verify-identities", cfg, record, json!({"identities": tol, "functional": functional_tol}))
}

fn run_flow_command(cfg: &RunConfig) -> CliResult<String> {
    let steps = cfg.steps.unwrap_or(100);
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("finsler-run"));
    let mut state = match &cfg.resume {
        Some(path) => FlowState::load(path)?,
        None => {
            let entry = cfg.entry()?;
            let (grid, fiber) = cfg.grids(&entry.chart())?;
            encode_state(&entry, &grid, &fiber, cfg.flow_config())?
        }
    };
    fs::create_dir_all(&out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))?;
    let ckpt = out.join("checkpoint.json");
    let mut csv = CsvSink::default();
    let run = run_flow(
        &mut state,
        steps,
        &mut csv,
        Some(CheckpointPlan {
            every: cfg.checkpoint_every.unwrap_or(0),
            path: &ckpt,
        }),
    )?;
    let csv_path = write_output(&out, "diagnostics.csv", csv.text.as_bytes())?;
    let mut effective = cfg.clone();
    effective.out = Some(out.clone());
    let m = manifest(
        "flow",
        &effective,
        json!({"flow": state.config, "max_retries": flow::MAX_RETRIES, "structure_check": "g positive definite and Liouville density positive at every node"}),
    );
    write_output(
        &out,
        "manifest.json",
        (serde_json::to_string_pretty(&m).expect("serialize") + "\n").as_bytes(),
    )?;
    let last = state.diagnostics()?;
    let summary = json!({
        "command": "flow",
        "steps": run.steps,
        "final": last,
        "csv": csv_path,
        "checkpoint": ckpt,
        "failure": run.failure.as_ref().map(|e| e.to_string()),
    });
    let text = serde_json::to_string_pretty(&summary).expect("serialize") + "\n";
    if let Some(e) = run.failure {
        print!("{text}");
        return Err(CliError::Core(e));
    }
    Ok(text)
}

fn zoo_command(action: &ZooAction) -> CliResult<String> {
    match action {
        ZooAction::List => {
            let mut out = String::new();
            for e in zoo::list() {
                out.push_str(&e.summary());
                out.push('\n');
            }
            Ok(out)
        }
        ZooAction::Check(opts) => {
            let cfg = opts.resolve()?;
            let entry = cfg.entry()?;
            let tol = cfg.tol(1e-5)?;
            let rep = zoo::reference_check(&entry, cfg.samples.unwrap_or(12), tol)?;
            let passed = rep.all_passed();
            let text = emit("zoo-check", &cfg, to_json(&rep), json!({"references": tol}))?;
            if !passed {
                print!("{text}");
                return Err(CliError::Failed(format!("{} does not match its references", entry.name)));
            }
            Ok(text)
        }
    }
}

fn threads(cfg_threads: Option<usize>, env: Option<&str>) -> CliResult<usize> {
    let from_env = match env {
        Some(s) if !s.trim().is_empty() => Some(
            s.trim()
                .parse::<usize>()
                .map_err(|_| usage(format!("FINSLER_THREADS must be a positive integer, got '{s}'")))?,
        ),
        _ => None,
    };
    let n = cfg_threads.or(from_env).unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    });
    if n == 0 {
        return Err(usage("thread count must be at least 1"));
    }
    Ok(n)
}

fn dispatch(cli: &Cli, env_threads: Option<&str>) -> CliResult<String> {
    let opts = match &cli.command {
        Command::Validate(o)
        | Command::Report(o)
        | Command::Functional(o)
        | Command::VerifyIdentities(o)
        | Command::Flow(o) => Some(o),
        Command::Zoo { action: ZooAction::Check(o) } => Some(o),
        Command::Zoo { action: ZooAction::List } => None,
    };
    let cfg = match opts {
        Some(o) => o.resolve()?,
        None => RunConfig::default(),
    };
    let n = threads(cfg.threads, env_threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| usage(format!("cannot start {n} worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Validate(_) => validate(&cfg),
        Command::Report(_) => report(&cfg),
        Command::Functional(_) => functional(&cfg),
        Command::VerifyIdentities(_) => verify_identities(&cfg),
        Command::Flow(_) => run_flow_command(&cfg),
        Command::Zoo { action } => zoo_command(action),
    })
}

/// Run one invocation; returns the process exit code.
pub fn run(args: &[String], env_threads: Option<&str>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = usage(e.to_string().trim().to_string());
            eprintln!("{}", err.record());
            return err.exit_code();
        }
    };
    match dispatch(&cli, env_threads) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
