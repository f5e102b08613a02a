//! PDE-constrained sound-speed reconstruction.
//!
//! Every objective evaluation runs one batched forward solve over all
//! sources and returns the misfit together with its gradient, so each
//! evaluation costs exactly one NPE. Two drivers are provided:
//!
//! * fixed-step gradient descent with a safeguard that rejects and halves
//!   steps which increase the misfit;
//! * L-BFGS (two-loop recursion) with a strong-Wolfe line search.
//!
//! Iterates live in the space of nodal speeds with the `L²` inner product
//! `⟨a, b⟩ = h² Σ a b`, under which the adjoint gradient density is the
//! Riesz representative of the derivative. Updates are projected onto the
//! speed bounds and confined to the ROI when masking is on.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adjoint::{objective_and_gradient, GradientOptions};
use crate::cbs::{SolverConfig, Wavefield};
use crate::error::{Error, Result};
use crate::geometry::{MeasurementMatrix, TransducerArray};
use crate::grid::{Grid2D, RealField, SoundSpeedField};
use crate::metrics::{psnr, ssim, DEFAULT_DATA_RANGE};
use crate::phantom::{roi_mask, BACKGROUND_SPEED, DEFAULT_ROI_FRACTION, SPEED_BOUNDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    GradientDescent {
        step: f64,
    },
    Lbfgs {
        memory: usize,
        wolfe_c1: f64,
        wolfe_c2: f64,
        max_line_search: usize,
        /// Largest speed change (m/s) of the first, steepest-descent trial.
        initial_step: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Lbfgs { memory: 10, wolfe_c1: 1e-4, wolfe_c2: 0.9, max_line_search: 10, initial_step: 5.0 }
    }
}

#[derive(Debug, Clone, Default)]
pub enum Initialization {
    /// Constant field at [`InversionConfig::background`].
    #[default]
    Background,
    Provided(SoundSpeedField),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopCriteria {
    pub max_outer: usize,
    /// Stop once the Euclidean norm of the gradient values is at most this.
    pub grad_tol: f64,
    /// Stop once an accepted step lowers the misfit by less than this
    /// fraction; zero disables the test.
    pub obj_rel_tol: f64,
    /// Discrepancy principle: stop once the misfit drops to this multiple
    /// of the expected noise energy (needs a finite `snr_db` on the data).
    pub discrepancy: Option<f64>,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self { max_outer: 30, grad_tol: 0.0, obj_rel_tol: 0.0, discrepancy: None }
    }
}

#[derive(Debug, Clone)]
pub struct InversionConfig {
    pub optimizer: Optimizer,
    pub init: Initialization,
    pub background: f64,
    pub bounds: Option<(f64, f64)>,
    pub stop: StopCriteria,
    /// Restrict updates to the ROI disc of this radius fraction.
    pub roi_radius_fraction: Option<f64>,
    /// Start each forward solve from the wavefields of the current iterate.
    pub warm_start: bool,
    /// Scale L-BFGS directions by the inverse source illumination
    /// `1 / Σ_n |Y_n|²` of the starting model.
    pub illumination_preconditioning: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            init: Initialization::Background,
            background: BACKGROUND_SPEED,
            bounds: Some(SPEED_BOUNDS),
            stop: StopCriteria::default(),
            roi_radius_fraction: Some(DEFAULT_ROI_FRACTION),
            warm_start: true,
            illumination_preconditioning: true,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        match self.optimizer {
            Optimizer::GradientDescent { step } => {
                if !(step > 0.0 && step.is_finite()) {
                    return Err(Error::InvalidConfig(format!("step must be positive, got {step}")));
                }
            }
            Optimizer::Lbfgs { memory, wolfe_c1, wolfe_c2, max_line_search, initial_step } => {
                if memory == 0 {
                    return Err(Error::InvalidConfig("L-BFGS memory must be at least 1".into()));
                }
                if !(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0) {
                    return Err(Error::InvalidConfig(format!("need 0 < c1 < c2 < 1, got c1={wolfe_c1}, c2={wolfe_c2}")));
                }
                if max_line_search == 0 {
                    return Err(Error::InvalidConfig("max_line_search must be at least 1".into()));
                }
                if !(initial_step > 0.0) {
                    return Err(Error::InvalidConfig("initial_step must be positive".into()));
                }
            }
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::InvalidConfig(format!("invalid speed bounds ({lo}, {hi})")));
            }
        }
        if !(self.background > 0.0) {
            return Err(Error::InvalidSpeed(self.background));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Initial,
    Accepted,
    /// Gradient-descent step that raised the misfit; the step was halved.
    Rejected,
    /// Line search exhausted its trials; the run stops at the best point.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub outer_iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub npe_total: u64,
    pub wall_ms: f64,
    /// Step length used (GD: step size; L-BFGS: line-search α).
    pub step: f64,
    pub status: StepStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr_db: f64,
    pub ssim: f64,
}

impl Metrics {
    pub fn compute(reconstruction: &SoundSpeedField, truth: &SoundSpeedField, data_range: f64) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(reconstruction.field(), truth.field(), data_range)?,
            ssim: ssim(reconstruction.field(), truth.field(), data_range)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub final_speed: SoundSpeedField,
    pub history: Vec<HistoryEntry>,
    pub metrics: Option<Metrics>,
    pub line_search_failed: bool,
    /// Forward solves (over all pairs) that hit the iteration cap.
    pub unconverged_solves: usize,
}

impl ReconstructionResult {
    pub fn npe_total(&self) -> u64 {
        self.history.last().map_or(0, |h| h.npe_total)
    }

    pub fn final_objective(&self) -> f64 {
        self.history.iter().rev().find(|h| h.status != StepStatus::Rejected).map_or(f64::NAN, |h| h.objective)
    }

    pub fn with_metrics(mut self, truth: &SoundSpeedField) -> Result<Self> {
        self.metrics = Some(Metrics::compute(&self.final_speed, truth, DEFAULT_DATA_RANGE)?);
        Ok(self)
    }
}

/// Expected `Σ|η|²` of the noise in `observed`, estimated from the noisy
/// power and the recorded SNR; `None` for noise-free data.
pub fn expected_noise_energy(observed: &MeasurementMatrix) -> Option<f64> {
    let snr = observed.snr_db.filter(|s| s.is_finite())?;
    let ratio = 10f64.powf(-snr / 10.0);
    Some(observed.energy() * ratio / (1.0 + ratio))
}

/// `‖x − truth‖ / ‖truth − background‖`.
pub fn relative_speed_error(x: &SoundSpeedField, truth: &SoundSpeedField, background: f64) -> f64 {
    let num: f64 = x.values().iter().zip(truth.values()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.values().iter().map(|b| (b - background).powi(2)).sum();
    (num / den).sqrt()
}

#[derive(Clone)]
struct Point {
    speed: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
    fields: Vec<Wavefield>,
}

struct Problem<'a> {
    observed: &'a MeasurementMatrix,
    array: &'a TransducerArray,
    grid: Grid2D,
    solver: &'a SolverConfig,
    options: GradientOptions,
    mask: Option<Vec<bool>>,
    bounds: Option<(f64, f64)>,
    warm_start: bool,
    /// Misfit level at which the discrepancy principle stops the run.
    noise_floor: Option<f64>,
    /// Diagonal initial inverse Hessian for L-BFGS.
    scaling: Option<Vec<f64>>,
    npe: u64,
    unconverged: usize,
    start: Instant,
}

impl Problem<'_> {
    fn evaluate(&mut self, speed: Vec<f64>, anchor: Option<&Point>) -> Result<Point> {
        let field = SoundSpeedField::new(RealField::from_values(self.grid, speed)?)?;
        let warm = if self.warm_start { anchor.map(|p| p.fields.as_slice()) } else { None };
        let eval = objective_and_gradient(&field, self.observed, self.array, self.solver, &self.options, warm)?;
        self.npe += eval.npe();
        self.unconverged += eval.batch.reports.iter().flatten().filter(|r| !r.converged).count();
        Ok(Point {
            speed: field.into_field().into_values(),
            value: eval.objective.value,
            gradient: eval.gradient.into_values(),
            fields: eval.batch.fields.into_iter().next().unwrap_or_default(),
        })
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid.h * self.grid.h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// `x + α d`, projected onto the bounds, frozen outside the mask.
    fn project(&self, x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(d)
            .enumerate()
            .map(|(k, (xi, di))| {
                if self.mask.as_ref().is_some_and(|m| !m[k]) {
                    return *xi;
                }
                let v = xi + alpha * di;
                match self.bounds {
                    Some((lo, hi)) => v.clamp(lo, hi),
                    None => v,
                }
            })
            .collect()
    }

    fn record(&self, history: &mut Vec<HistoryEntry>, outer_iter: usize, p: &Point, step: f64, status: StepStatus) {
        history.push(HistoryEntry {
            outer_iter,
            objective: p.value,
            grad_norm: norm(&p.gradient),
            npe_total: self.npe,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            step,
            status,
        });
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Reconstruct the sound speed on `grid` from `observed` data.
pub fn invert(
    observed: &MeasurementMatrix,
    array: &TransducerArray,
    grid: &Grid2D,
    config: &InversionConfig,
    solver: &SolverConfig,
) -> Result<ReconstructionResult> {
    config.validate()?;
    if observed.receivers != array.len() || observed.sources != array.len() {
        return Err(Error::DimensionMismatch("observed data does not match the transducer array".into()));
    }
    let init = match &config.init {
        Initialization::Background => SoundSpeedField::homogeneous(*grid, config.background)?,
        Initialization::Provided(f) => {
            if f.grid() != grid {
                return Err(Error::DimensionMismatch("initial field is not on the reconstruction grid".into()));
            }
            f.clone()
        }
    };
    let mask = config.roi_radius_fraction.map(|f| roi_mask(grid, f));
    let mut problem = Problem {
        observed,
        array,
        grid: *grid,
        solver,
        options: GradientOptions { mask: mask.clone(), flip_conjugation: false },
        mask,
        bounds: config.bounds,
        warm_start: config.warm_start,
        noise_floor: match config.stop.discrepancy {
            Some(tau) => Some(
                tau * expected_noise_energy(observed)
                    .ok_or_else(|| Error::InvalidConfig("discrepancy stop needs noisy data with a finite snr_db".into()))?,
            ),
            None => None,
        },
        scaling: None,
        npe: 0,
        unconverged: 0,
        start: Instant::now(),
    };
    let x0 = problem.project(init.values(), 0.0, &vec![0.0; grid.len()]);
    let first = problem.evaluate(x0, None)?;
    if config.illumination_preconditioning {
        problem.scaling = Some(illumination_scaling(&first.fields));
    }
    let mut history = Vec::new();
    problem.record(&mut history, 0, &first, 0.0, StepStatus::Initial);

    let (last, failed) = match config.optimizer {
        Optimizer::GradientDescent { step } => (gradient_descent(&mut problem, first, step, &config.stop, &mut history)?, false),
        Optimizer::Lbfgs { memory, wolfe_c1, wolfe_c2, max_line_search, initial_step } => {
            let ls = LineSearch { c1: wolfe_c1, c2: wolfe_c2, max_trials: max_line_search };
            lbfgs(&mut problem, first, memory, initial_step, &ls, &config.stop, &mut history)?
        }
    };
    Ok(ReconstructionResult {
        final_speed: SoundSpeedField::new(RealField::from_values(*grid, last.speed)?)?,
        history,
        metrics: None,
        line_search_failed: failed,
        unconverged_solves: problem.unconverged,
    })
}

impl Problem<'_> {
    fn done(&self, p: &Point, stop: &StopCriteria) -> bool {
        norm(&p.gradient) <= stop.grad_tol || self.noise_floor.is_some_and(|floor| p.value <= floor)
    }
}

fn stalled(previous: f64, current: f64, stop: &StopCriteria) -> bool {
    stop.obj_rel_tol > 0.0 && previous - current < stop.obj_rel_tol * previous
}

fn gradient_descent(problem: &mut Problem, mut x: Point, mut step: f64, stop: &StopCriteria, history: &mut Vec<HistoryEntry>) -> Result<Point> {
    if problem.done(&x, stop) {
        return Ok(x);
    }
    for outer in 1..=stop.max_outer {
        let d: Vec<f64> = x.gradient.iter().map(|g| -g).collect();
        let speed = problem.project(&x.speed, step, &d);
        let trial = problem.evaluate(speed, Some(&x))?;
        if trial.value > x.value {
            let rejected = Point { speed: Vec::new(), value: trial.value, gradient: trial.gradient, fields: Vec::new() };
            problem.record(history, outer, &rejected, step, StepStatus::Rejected);
            step *= 0.5;
            continue;
        }
        let previous = x.value;
        x = trial;
        problem.record(history, outer, &x, step, StepStatus::Accepted);
        if problem.done(&x, stop) || stalled(previous, x.value, stop) {
            break;
        }
    }
    Ok(x)
}

struct LineSearch {
    c1: f64,
    c2: f64,
    max_trials: usize,
}

struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
}

enum Search {
    Found(Point, f64),
    /// Best improving point seen, if any.
    Failed(Option<(Point, f64)>),
}

/// Minimizer of the cubic through two points with slopes, kept within the
/// central 80% of the bracket; falls back to bisection.
fn cubic_step(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    if t.is_finite() { t.clamp(left + margin, right - margin) } else { mid }
}

impl LineSearch {
    fn run(&self, problem: &mut Problem, x: &Point, d: &[f64], slope0: f64) -> Result<Search> {
        let f0 = x.value;
        let mut trials = 0;
        let mut best: Option<(Point, f64)> = None;
        let probe = |problem: &mut Problem, alpha: f64, best: &mut Option<(Point, f64)>| -> Result<(Point, Trial)> {
            let p = problem.evaluate(problem.project(&x.speed, alpha, d), Some(x))?;
            let t = Trial { alpha, value: p.value, slope: problem.dot(&p.gradient, d) };
            if p.value < best.as_ref().map_or(f0, |b| b.0.value) {
                *best = Some((p.clone(), alpha));
            }
            Ok((p, t))
        };
        let sufficient = |t: &Trial| t.value <= f0 + self.c1 * t.alpha * slope0;
        let curvature = |t: &Trial| t.slope.abs() <= -self.c2 * slope0;

        let mut prev = Trial { alpha: 0.0, value: f0, slope: slope0 };
        let mut alpha = 1.0;
        let (mut lo, mut hi) = loop {
            if trials == self.max_trials {
                return Ok(Search::Failed(best));
            }
            trials += 1;
            let (p, t) = probe(problem, alpha, &mut best)?;
            if !sufficient(&t) || (trials > 1 && t.value >= prev.value) {
                break (prev, t);
            }
            if curvature(&t) {
                return Ok(Search::Found(p, alpha));
            }
            if t.slope >= 0.0 {
                break (t, prev);
            }
            prev = t;
            alpha *= 2.0;
        };
        // zoom: `lo` satisfies sufficient decrease and has the lowest value
        while trials < self.max_trials {
            trials += 1;
            let alpha = cubic_step(&lo, &hi);
            let (p, t) = probe(problem, alpha, &mut best)?;
            if !sufficient(&t) || t.value >= lo.value {
                hi = t;
                continue;
            }
            if curvature(&t) {
                return Ok(Search::Found(p, alpha));
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        Ok(Search::Failed(best))
    }
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Relative floor keeping the inverse illumination bounded in shadow zones.
const ILLUMINATION_FLOOR: f64 = 1e-3;

fn illumination_scaling(fields: &[Wavefield]) -> Vec<f64> {
    let n = fields.first().map_or(0, |w| w.interior.values().len());
    let mut illum = vec![0.0; n];
    for w in fields {
        illum.iter_mut().zip(w.interior.values()).for_each(|(a, y)| *a += y.norm_sqr());
    }
    let floor = ILLUMINATION_FLOOR * illum.iter().fold(0.0f64, |m, v| m.max(*v));
    illum.iter().map(|a| 1.0 / (a + floor)).collect()
}

fn scale_by(v: &mut [f64], scaling: Option<&Vec<f64>>) {
    if let Some(w) = scaling {
        v.iter_mut().zip(w).for_each(|(x, s)| *x *= s);
    }
}

fn two_loop(problem: &Problem, gradient: &[f64], memory: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = gradient.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let a = pair.rho * problem.dot(&pair.s, &q);
        q.iter_mut().zip(&pair.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let mut wy = last.y.clone();
        scale_by(&mut wy, problem.scaling.as_ref());
        let gamma = problem.dot(&last.s, &last.y) / problem.dot(&last.y, &wy);
        scale_by(&mut q, problem.scaling.as_ref());
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (pair, a) in memory.iter().zip(alphas.iter().rev()) {
        let b = pair.rho * problem.dot(&pair.y, &q);
        q.iter_mut().zip(&pair.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn lbfgs(
    problem: &mut Problem,
    mut x: Point,
    memory: usize,
    initial_step: f64,
    ls: &LineSearch,
    stop: &StopCriteria,
    history: &mut Vec<HistoryEntry>,
) -> Result<(Point, bool)> {
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(memory);
    if problem.done(&x, stop) {
        return Ok((x, false));
    }
    let steepest = |problem: &Problem, g: &[f64]| {
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        scale_by(&mut d, problem.scaling.as_ref());
        let scale = initial_step / max_abs(&d);
        d.iter_mut().for_each(|v| *v *= scale);
        d
    };
    for outer in 1..=stop.max_outer {
        let mut d = if pairs.is_empty() { steepest(problem, &x.gradient) } else { two_loop(problem, &x.gradient, &pairs) };
        let mut slope0 = problem.dot(&x.gradient, &d);
        if !(slope0 < 0.0) {
            pairs.clear();
            d = steepest(problem, &x.gradient);
            slope0 = problem.dot(&x.gradient, &d);
        }
        match ls.run(problem, &x, &d, slope0)? {
            Search::Found(next, alpha) => {
                let s: Vec<f64> = next.speed.iter().zip(&x.speed).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = next.gradient.iter().zip(&x.gradient).map(|(a, b)| a - b).collect();
                let sy = problem.dot(&s, &y);
                if sy > 1e-12 * problem.dot(&s, &s).sqrt() * problem.dot(&y, &y).sqrt() {
                    if pairs.len() == memory {
                        pairs.pop_front();
                    }
                    pairs.push_back(Pair { s, y, rho: 1.0 / sy });
                }
                let previous = x.value;
                x = next;
                problem.record(history, outer, &x, alpha, StepStatus::Accepted);
                if problem.done(&x, stop) || stalled(previous, x.value, stop) {
                    break;
                }
            }
            Search::Failed(best) => {
                let alpha = match best {
                    Some((p, alpha)) => {
                        x = p;
                        alpha
                    }
                    None => 0.0,
                };
                problem.record(history, outer, &x, alpha, StepStatus::LineSearchFailed);
                return Ok((x, true));
            }
        }
    }
    Ok((x, false))
}
