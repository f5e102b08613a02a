//! `usct`: command-line front end for phantom generation, data simulation,
//! reconstruction, gradient checks, benchmarks and image metrics.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use usct::adjoint::{objective_and_gradient, simulate, GradientOptions};
use usct::cbs::{bcbs_solve, BatchPolicy, SolverConfig};
use usct::container::{write_real_field, Array};
use usct::experiment::{
    matrix_container, read_json, read_speed, sidecar_path, write_json, ExperimentConfig, MeasurementSidecar, PhantomSidecar,
    SourceConvergence,
};
use usct::geometry::{add_noise, make_sources};
use usct::grid::{Grid2D, SoundSpeedField};
use usct::inversion::{invert, Initialization, Optimizer};
use usct::metrics::{psnr, ssim, DEFAULT_DATA_RANGE};
use usct::oracle::fd_gradient;
use usct::phantom::{roi_mask, ScatteringClass, DEFAULT_ROI_FRACTION};

/// Largest grid side `gradcheck` accepts; each node costs two full solves.
const GRADCHECK_MAX_SIDE: usize = 128;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Lib(#[from] usct::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use usct::Error as E;
        match self {
            CliError::Lib(E::Io(_) | E::BadMagic(_) | E::UnsupportedVersion(_) | E::Truncated(_)) => 3,
            CliError::Lib(E::EpsilonTooSmall { .. }) => 2,
            CliError::Lib(_) | CliError::Validation(_) => 1,
            CliError::Csv(_) => 3,
            CliError::Numerical(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "usct", version, about = "Ultrasound CT with a convergent Born series Helmholtz solver")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sound-speed phantom and its JSON sidecar.
    Phantom {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Output container (default: <output_dir>/phantom.usct).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate (optionally noisy) measurements of a phantom.
    Simulate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Output container (default: <output_dir>/data.usct).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct the sound speed from a measurement container.
    Invert {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Measurement container written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        /// Ground-truth speed container; enables metrics.json.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare adjoint gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[command(flatten)]
        check: GradcheckArgs,
        /// Output CSV (default: <output_dir>/gradcheck.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time solver, gradient and inversion tasks.
    Bench {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Output CSV (default: <output_dir>/bench.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and SSIM between two speed containers of equal shape.
    Metrics {
        #[arg(long)]
        reconstruction: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Dynamic range (m/s).
        #[arg(long, default_value_t = DEFAULT_DATA_RANGE)]
        range: f64,
        /// Output JSON (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerKind {
    Lbfgs,
    Gd,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum StartKind {
    Background,
    Truth,
}

/// Flags mirroring the experiment config keys; each overrides `--config`.
#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Grid spacing (m).
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    frequency_hz: Option<f64>,
    /// full | sparse-1 | sparse-2 | partial-1 | partial-2. Without --count
    /// the reference transducer count of the view is used.
    #[arg(long)]
    view: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    /// Ring diameter (m).
    #[arg(long)]
    ring_diameter: Option<f64>,
    /// Arc center of partial views (radians).
    #[arg(long)]
    facing_angle: Option<f64>,
    #[arg(long)]
    class: Option<ScatteringClass>,
    /// Phantom seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Phantom container to use instead of a generated one.
    #[arg(long)]
    phantom: Option<PathBuf>,
    /// SNR in dB, or `none` for noise-free data.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Solver tolerance on the relative update.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Padding in nodes.
    #[arg(long)]
    pad: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
    /// Gradient-descent step size.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// Discrepancy-principle factor for noisy data.
    #[arg(long)]
    discrepancy: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($dst:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($dst)+ = v;
                }
            };
        }
        set!(nx => grid.nx);
        set!(ny => grid.ny);
        set!(h => grid.h);
        set!(frequency_hz => frequency_hz);
        if let Some(view) = &self.view {
            c.array.view = view.clone();
            c.array.count = None;
        }
        if let Some(n) = self.count {
            c.array.count = Some(n);
        }
        if let Some(d) = self.ring_diameter {
            c.array.ring_diameter = Some(d);
        }
        set!(facing_angle => array.facing_angle);
        set!(class => phantom.class);
        set!(seed => phantom.seed);
        if let Some(p) = &self.phantom {
            c.phantom.path = Some(p.clone());
        }
        if let Some(s) = &self.snr {
            c.noise.snr_db = parse_snr(s)?;
        }
        set!(noise_seed => noise.seed);
        set!(tol => solver.tol);
        set!(max_iters => solver.max_iters);
        if let Some(p) = self.pad {
            c.solver.pad = Some(p);
        }
        match self.optimizer {
            Some(OptimizerKind::Gd) => c.inversion.optimizer = Optimizer::GradientDescent { step: self.step.unwrap_or(1e-3) },
            Some(OptimizerKind::Lbfgs) => c.inversion.optimizer = Optimizer::default(),
            None => {}
        }
        if let (Some(s), Optimizer::GradientDescent { step }) = (self.step, &mut c.inversion.optimizer) {
            *step = s;
        }
        set!(max_outer => inversion.max_outer);
        if let Some(d) = self.discrepancy {
            c.inversion.discrepancy = Some(d);
        }
        set!(output_dir => output_dir);
        c.validate()?;
        Ok(c)
    }
}

fn parse_snr(s: &str) -> CliResult<Option<f64>> {
    if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .map(Some)
        .ok_or_else(|| CliError::Validation(format!("--snr expects a number of dB or 'none', got '{s}'")))
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random ROI nodes to check.
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    node_seed: u64,
    /// Finite-difference speed perturbation (m/s).
    #[arg(long, default_value_t = 0.01)]
    fd_step: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    /// Solver tolerance used for every solve in the check.
    #[arg(long, default_value_t = 1e-12)]
    check_tol: f64,
    /// Model at which the gradient is evaluated.
    #[arg(long, value_enum, default_value_t = StartKind::Background)]
    start: StartKind,
    /// Debug negative control: drop the residual conjugation.
    #[arg(long)]
    flip_conjugation: bool,
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(usct::Error::from)?;
    }
    Ok(())
}

fn out_path(out: &Option<PathBuf>, cfg: &ExperimentConfig, default: &str) -> CliResult<PathBuf> {
    let p = out.clone().unwrap_or_else(|| cfg.output_dir.join(default));
    ensure_parent(&p)?;
    Ok(p)
}

fn cmd_phantom(exp: &ExperimentArgs, out: &Option<PathBuf>) -> CliResult<()> {
    let cfg = exp.resolve()?;
    let grid = cfg.grid.build()?;
    let (speed, spec) = cfg.phantom(&grid)?;
    let path = out_path(out, &cfg, "phantom.usct")?;
    write_real_field(&path, speed.field())?;
    write_json(&sidecar_path(&path), &PhantomSidecar::new(&grid, &cfg.phantom, spec))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(exp: &ExperimentArgs, out: &Option<PathBuf>) -> CliResult<()> {
    let cfg = exp.resolve()?;
    let grid = cfg.grid.build()?;
    let (speed, _) = cfg.phantom(&grid)?;
    let array = cfg.array.build(&grid)?;
    let (clean, batch) = simulate(&speed, &array, &cfg.solver_config(), None)?;
    let data = match cfg.noise.snr_db {
        Some(snr) => add_noise(&clean, snr, cfg.noise.seed),
        None => clean,
    };
    let solves: Vec<SourceConvergence> = batch.reports[0]
        .iter()
        .enumerate()
        .map(|(n, r)| SourceConvergence {
            source: n,
            iterations: r.iterations_used,
            final_rel_update: r.final_rel_update,
            converged: r.converged,
        })
        .collect();
    let path = out_path(out, &cfg, "data.usct")?;
    matrix_container(&data).write(&path)?;
    let sidecar = MeasurementSidecar {
        omega: cfg.omega(),
        frequency_hz: cfg.frequency_hz,
        snr_db: cfg.noise.snr_db,
        view: array.view,
        ring_diameter: cfg.array.ring_diameter(&grid),
        seed: cfg.noise.seed,
        grid: (&grid).into(),
        solves: solves.clone(),
    };
    write_json(&sidecar_path(&path), &sidecar)?;
    eprintln!("wrote {} ({}x{})", path.display(), data.receivers, data.sources);
    let failed: Vec<String> = solves
        .iter()
        .filter(|s| !s.converged)
        .map(|s| format!("source {}: {} iterations, rel update {:.3e}", s.source, s.iterations, s.final_rel_update))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Numerical(format!("{} solves did not converge:\n  {}", failed.len(), failed.join("\n  "))));
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsRecord {
    /// A number, or the string "+inf" for an exact match.
    psnr_db: serde_json::Value,
    ssim: f64,
}

impl MetricsRecord {
    fn new(psnr_db: f64, ssim: f64) -> Self {
        let psnr_db = if psnr_db == f64::INFINITY { serde_json::Value::from("+inf") } else { serde_json::Value::from(psnr_db) };
        Self { psnr_db, ssim }
    }
}

#[derive(Serialize)]
struct InversionSummary {
    npe_total: u64,
    outer_iterations: usize,
    final_objective: f64,
    line_search_failed: bool,
    unconverged_solves: usize,
}

fn cmd_invert(exp: &ExperimentArgs, data_path: &Path, truth: &Option<PathBuf>) -> CliResult<()> {
    let cfg = exp.resolve()?;
    let sidecar: MeasurementSidecar = read_json(&sidecar_path(data_path))?;
    let grid = sidecar.grid.build()?;
    let array = sidecar.array()?;
    let observed = sidecar.matrix(Array::read(data_path)?)?;
    let solver = SolverConfig { omega: sidecar.omega, ..cfg.solver_config() };
    let mut inv = cfg.inversion_config();
    inv.init = Initialization::Background;

    let result = invert(&observed, &array, &grid, &inv, &solver)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(usct::Error::from)?;
    write_real_field(dir.join("speed.usct"), result.final_speed.field())?;
    let mut w = csv::Writer::from_path(dir.join("history.csv"))?;
    for h in &result.history {
        w.serialize(h)?;
    }
    w.flush().map_err(usct::Error::from)?;
    write_json(
        &dir.join("summary.json"),
        &InversionSummary {
            npe_total: result.npe_total(),
            outer_iterations: result.history.last().map_or(0, |h| h.outer_iter),
            final_objective: result.final_objective(),
            line_search_failed: result.line_search_failed,
            unconverged_solves: result.unconverged_solves,
        },
    )?;
    if let Some(truth_path) = truth {
        let truth = read_speed(truth_path, grid)?;
        let result = result.with_metrics(&truth)?;
        let m = result.metrics.expect("metrics were just computed");
        write_json(&dir.join("metrics.json"), &MetricsRecord::new(m.psnr_db, m.ssim))?;
    }
    eprintln!("wrote reconstruction to {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct GradcheckRow {
    node: usize,
    adjoint_grad: f64,
    fd_grad: f64,
    rel_err: f64,
}

/// `count` distinct ROI nodes drawn with a seeded generator.
fn pick_nodes(grid: &Grid2D, count: usize, seed: u64) -> CliResult<Vec<usize>> {
    let roi: Vec<usize> = roi_mask(grid, DEFAULT_ROI_FRACTION).iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k).collect();
    if count > roi.len() {
        return Err(CliError::Validation(format!("asked for {count} nodes but the ROI has {}", roi.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, roi.len(), count).into_iter().map(|k| roi[k]).collect())
}

fn cmd_gradcheck(exp: &ExperimentArgs, check: &GradcheckArgs, out: &Option<PathBuf>) -> CliResult<()> {
    let cfg = exp.resolve()?;
    let grid = cfg.grid.build()?;
    if grid.nx > GRADCHECK_MAX_SIDE || grid.ny > GRADCHECK_MAX_SIDE {
        return Err(CliError::Validation(format!(
            "gradcheck is limited to {GRADCHECK_MAX_SIDE}x{GRADCHECK_MAX_SIDE} grids, got {}x{}",
            grid.nx, grid.ny
        )));
    }
    if !(check.fd_step > 0.0 && check.threshold > 0.0) {
        return Err(CliError::Validation("fd_step and threshold must be positive".into()));
    }
    let solver = SolverConfig { tol: check.check_tol, ..cfg.solver_config() };
    let (truth, _) = cfg.phantom(&grid)?;
    let array = cfg.array.build(&grid)?;
    let (clean, _) = simulate(&truth, &array, &solver, None)?;
    let observed = match cfg.noise.snr_db {
        Some(snr) => add_noise(&clean, snr, cfg.noise.seed),
        None => clean,
    };
    let model = match check.start {
        StartKind::Truth => truth,
        StartKind::Background => SoundSpeedField::homogeneous(grid, cfg.inversion_config().background)?,
    };
    let options = GradientOptions { mask: None, flip_conjugation: check.flip_conjugation };
    let eval = objective_and_gradient(&model, &observed, &array, &solver, &options, None)?;
    let nodes = pick_nodes(&grid, check.nodes, check.node_seed)?;
    let fd = fd_gradient(&model, &observed, &array, &nodes, check.fd_step, &solver)?;

    // the misfit is resolved to about tol·‖y‖², so smaller quotients are noise
    let floor = check.check_tol * observed.energy() / (check.fd_step * grid.h * grid.h);
    let path = out_path(out, &cfg, "gradcheck.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    let mut worst: f64 = 0.0;
    for (&node, &fd_grad) in nodes.iter().zip(&fd) {
        let adjoint_grad = eval.gradient.values()[node];
        let rel_err = (adjoint_grad - fd_grad).abs() / fd_grad.abs().max(floor);
        worst = worst.max(rel_err);
        w.serialize(GradcheckRow { node, adjoint_grad, fd_grad, rel_err })?;
    }
    w.flush().map_err(usct::Error::from)?;
    eprintln!("wrote {}; max rel err {worst:.3e}", path.display());
    if !(worst <= check.threshold) {
        return Err(CliError::Numerical(format!("max relative error {worst:.3e} exceeds {:.1e}", check.threshold)));
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    task: &'static str,
    grid: String,
    batch: String,
    wall_ms: f64,
    npe: u64,
}

fn cmd_bench(exp: &ExperimentArgs, out: &Option<PathBuf>) -> CliResult<()> {
    let cfg = exp.resolve()?;
    let grid = cfg.grid.build()?;
    let solver = cfg.solver_config();
    let (truth, _) = cfg.phantom(&grid)?;
    let array = cfg.array.build(&grid)?;
    let sources: Vec<_> = make_sources(&array, &grid)?.into_iter().map(|s| s.field).collect();
    let dims = format!("{}x{}", grid.nx, grid.ny);
    let mut rows = Vec::new();
    let mut time = |task: &'static str, batch: String, f: &mut dyn FnMut() -> CliResult<u64>| -> CliResult<()> {
        let t0 = Instant::now();
        let npe = f()?;
        rows.push(BenchRow { task, grid: dims.clone(), batch, wall_ms: t0.elapsed().as_secs_f64() * 1e3, npe });
        Ok(())
    };
    let one = std::slice::from_ref(&truth);
    let eight = &sources[..sources.len().min(8)];

    time("cbs_single", "1x1".into(), &mut || Ok(bcbs_solve(one, &sources[..1], &solver, BatchPolicy::PerSpeed, None)?.npe))?;
    time("cbs_sequential", format!("1x{}", eight.len()), &mut || {
        let mut npe = 0;
        for s in eight {
            npe += bcbs_solve(one, std::slice::from_ref(s), &solver, BatchPolicy::PerSpeed, None)?.npe;
        }
        Ok(npe)
    })?;
    time("bcbs", format!("1x{}", eight.len()), &mut || Ok(bcbs_solve(one, eight, &solver, BatchPolicy::PerSpeed, None)?.npe))?;
    let media: Vec<SoundSpeedField> = (0..4u64)
        .map(|k| {
            let c = ExperimentConfig { phantom: usct::experiment::PhantomConfig { seed: cfg.phantom.seed + k, ..cfg.phantom.clone() }, ..cfg.clone() };
            c.phantom(&grid).map(|(s, _)| s)
        })
        .collect::<Result<_, _>>()?;
    time("bcbs", format!("4x{}", eight.len()), &mut || Ok(bcbs_solve(&media, eight, &solver, BatchPolicy::PerSpeed, None)?.npe))?;

    let (clean, _) = simulate(&truth, &array, &solver, None)?;
    let observed = match cfg.noise.snr_db {
        Some(snr) => add_noise(&clean, snr, cfg.noise.seed),
        None => clean,
    };
    let start = SoundSpeedField::homogeneous(grid, cfg.inversion_config().background)?;
    time("objective_and_gradient", format!("1x{}", array.len()), &mut || {
        Ok(objective_and_gradient(&start, &observed, &array, &solver, &GradientOptions::default(), None)?.npe())
    })?;
    time("inversion", format!("1x{}", array.len()), &mut || Ok(invert(&observed, &array, &grid, &cfg.inversion_config(), &solver)?.npe_total()))?;

    let path = out_path(out, &cfg, "bench.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(usct::Error::from)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn read_plain_field(path: &Path) -> CliResult<SoundSpeedField> {
    let a = Array::read(path)?;
    let [ny, nx] = a.dims[..] else {
        return Err(CliError::Validation(format!("{} is not a 2D field", path.display())));
    };
    Ok(SoundSpeedField::new(a.into_real_field(Grid2D::new(nx, ny, 1.0, (0.0, 0.0))?)?)?)
}

fn cmd_metrics(reconstruction: &Path, truth: &Path, range: f64, out: &Option<PathBuf>) -> CliResult<()> {
    if !(range > 0.0) {
        return Err(CliError::Validation(format!("range must be positive, got {range}")));
    }
    let a = read_plain_field(reconstruction)?;
    let b = read_plain_field(truth)?;
    let rec = MetricsRecord::new(psnr(a.field(), b.field(), range)?, ssim(a.field(), b.field(), range)?);
    match out {
        Some(p) => {
            ensure_parent(p)?;
            write_json(p, &rec)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&rec).expect("metrics serialize")),
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Phantom { exp, out } => cmd_phantom(exp, out),
        Command::Simulate { exp, out } => cmd_simulate(exp, out),
        Command::Invert { exp, data, truth } => cmd_invert(exp, data, truth),
        Command::Gradcheck { exp, check, out } => cmd_gradcheck(exp, check, out),
        Command::Bench { exp, out } => cmd_bench(exp, out),
        Command::Metrics { reconstruction, truth, range, out } => cmd_metrics(reconstruction, truth, *range, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
