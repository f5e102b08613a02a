//! Convergent Born series (CBS) solver for the 2D Helmholtz equation
//!
//! ```text
//! (∇² + k(r)²) Y = −ρ,    k(r) = ω / c(r)
//! ```
//!
//! Sign conventions (time dependence e^{−iωt}, outgoing waves):
//!
//! * scattering potential `V = k² − k0² − iε`, so the equation reads
//!   `(∇² + k0² + iε) Y = −ρ − V Y`;
//! * the Green's operator is the Fourier multiplier
//!   `G = F⁻¹ (|p|² − k0² − iε)⁻¹ F = −(∇² + k0² + iε)⁻¹`, which turns the
//!   previous line into the Born fixed point `Y = Gρ + G V Y`;
//! * with the preconditioner `Q = (i/ε) V` (so `V = −iε Q`) the iteration
//!   `Y ← M Y + Q G ρ`, `M = −iε Q G Q − Q + I`, has spectral radius below
//!   one whenever `ε ≥ max |k² − k0²|`.
//!
//! The interior speed grid is embedded in a larger periodic computational
//! grid: first `pad` nodes of constant background, then an absorbing layer
//! in which `k²` gains a smoothly increasing positive imaginary part. The
//! absorbing layer is part of the medium, so it enters `ε` like any other
//! contrast.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{angular_frequencies, Fft2, Fft2Scratch};
use crate::grid::{ComplexField, Grid2D, SoundSpeedField};
use crate::phantom::BACKGROUND_SPEED;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Relative safety margin applied to ε above max |k² − k0²|.
pub const EPSILON_MARGIN: f64 = 1e-8;
/// Lower bound for ε relative to k0², used for homogeneous media.
pub const EPSILON_FLOOR: f64 = 1e-6;

/// How the background wavenumber and shift are chosen for each medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum K0Policy {
    /// Midpoint of the real parts of k², smallest admissible ε.
    #[default]
    Midpoint,
    /// Caller-supplied values; rejected if ε is too small for the medium.
    Fixed { k0_sq: f64, epsilon: f64 },
}

/// Absorbing layer placed outside the background padding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbsorberConfig {
    /// Layer width in background wavelengths.
    pub width_wavelengths: f64,
    /// Amplitude attenuation, in nepers, for a wave crossing one layer.
    pub decay_nepers: f64,
}

impl Default for AbsorberConfig {
    fn default() -> Self {
        Self { width_wavelengths: 2.0, decay_nepers: 3.0 }
    }
}

impl AbsorberConfig {
    pub fn none() -> Self {
        Self { width_wavelengths: 0.0, decay_nepers: 0.0 }
    }
}

/// User-facing solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Angular frequency (rad/s).
    pub omega: f64,
    /// Stopping tolerance on the relative update norm.
    pub tol: f64,
    pub max_iters: usize,
    /// Background padding in nodes; `None` means one background wavelength.
    pub pad: Option<usize>,
    pub k0_policy: K0Policy,
    /// Speed of the padding and absorbing layer surrounding the medium.
    pub background_speed: f64,
    pub absorber: AbsorberConfig,
    /// Number of (medium, source) pairs processed per batch tile.
    pub chunk_size: usize,
}

pub const DEFAULT_FREQUENCY_HZ: f64 = 5.0e5;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            omega: TAU * DEFAULT_FREQUENCY_HZ,
            tol: 1e-6,
            max_iters: 500,
            pad: None,
            k0_policy: K0Policy::Midpoint,
            background_speed: BACKGROUND_SPEED,
            absorber: AbsorberConfig::default(),
            chunk_size: 64,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidConfig(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.background_speed > 0.0 && self.background_speed.is_finite()) {
            return Err(Error::InvalidSpeed(self.background_speed));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk_size must be at least 1".into()));
        }
        let a = &self.absorber;
        if !(a.width_wavelengths >= 0.0 && a.decay_nepers >= 0.0) {
            return Err(Error::InvalidConfig("absorber width and decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

/// Resolved per-medium parameters of the iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbsConfig {
    pub k0_sq: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub pad: usize,
    /// Absorbing layer width in nodes.
    pub absorber_nodes: usize,
    /// Peak imaginary part added to k² inside the absorbing layer.
    pub absorber_strength: f64,
}

/// Midpoint background for a speed field: `k0² = (min k² + max k²)/2`,
/// `ε = (max k² − min k²)/2 · (1 + 1e-8)`, floored at `1e-6 · k0²`.
pub fn choose_background(speed: &SoundSpeedField, omega: f64) -> (f64, f64) {
    let (lo, hi) = speed.min_max();
    let k2_max = (omega / lo).powi(2);
    let k2_min = (omega / hi).powi(2);
    let k0_sq = 0.5 * (k2_min + k2_max);
    let epsilon = (0.5 * (k2_max - k2_min) * (1.0 + EPSILON_MARGIN)).max(EPSILON_FLOOR * k0_sq);
    (k0_sq, epsilon)
}

/// Fraction of ε that absorbing nodes may use.
///
/// A node whose contrast `k² − k0²` equals `+iε` has a vanishing
/// preconditioner `Q` and is never updated by the iteration, so absorbing
/// contrast is kept strictly inside the convergence disc.
pub const ABSORBER_HEADROOM: f64 = 0.9;

/// Midpoint rule generalized to a complex medium: `k0²` is the midpoint of
/// the real parts and `ε` the largest distance from it, with absorbing
/// (complex) nodes held to [`ABSORBER_HEADROOM`] of ε.
pub fn choose_background_medium(k_sq: &[Complex64]) -> (f64, f64) {
    let (lo, hi) = k_sq
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| (lo.min(k.re), hi.max(k.re)));
    let k0_sq = 0.5 * (lo + hi);
    let radius = k_sq
        .iter()
        .map(|k| {
            let d = (k - k0_sq).norm();
            if k.im != 0.0 { d / ABSORBER_HEADROOM } else { d * (1.0 + EPSILON_MARGIN) }
        })
        .fold(0.0, f64::max);
    (k0_sq, radius.max(EPSILON_FLOOR * k0_sq))
}

fn max_contrast(k_sq: &[Complex64], k0_sq: f64) -> f64 {
    k_sq.iter().map(|k| (k - k0_sq).norm()).fold(0.0, f64::max)
}

/// `V = (ω/c)² − k0² − iε` on the speed grid.
pub fn scattering_potential(speed: &SoundSpeedField, omega: f64, k0_sq: f64, epsilon: f64) -> Result<ComplexField> {
    let k_sq: Vec<Complex64> = speed.values().iter().map(|c| Complex64::new((omega / c).powi(2), 0.0)).collect();
    let required = max_contrast(&k_sq, k0_sq);
    if epsilon < required {
        return Err(Error::EpsilonTooSmall { epsilon, required });
    }
    ComplexField::from_values(*speed.grid(), k_sq.iter().map(|k| k - k0_sq - I * epsilon).collect())
}

/// Outcome of one iterative solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations_used: usize,
    pub final_rel_update: f64,
    pub converged: bool,
    /// PDE evaluations attributed to this report: 1 for a standalone solve,
    /// 0 for a pair inside a batch (the batch as a whole counts once).
    pub npe_count: u64,
    pub greens_applications: u64,
    /// Relative update after each iteration.
    #[serde(skip)]
    pub rel_update_history: Vec<f64>,
}

/// A solved wavefield on both the computational and the interior grid.
#[derive(Debug, Clone)]
pub struct Wavefield {
    /// Full periodic computational grid, including padding and absorber.
    pub full: ComplexField,
    /// Cropped to the speed-field grid.
    pub interior: ComplexField,
}

/// Precomputed operators for one medium.
#[derive(Debug, Clone)]
pub struct CbsWorkspace {
    config: CbsConfig,
    omega: f64,
    interior: Grid2D,
    grid: Grid2D,
    /// Offset of interior node (0,0) inside the computational grid.
    offset: usize,
    k_sq: Vec<Complex64>,
    potential: Vec<Complex64>,
    precond: Vec<Complex64>,
    /// `1/(|p|² − k0² − iε)` in transposed spectral layout, already divided
    /// by the number of nodes so forward+inverse FFT needs no extra scaling.
    greens: Vec<Complex64>,
    laplacian: Vec<f64>,
    fft: Fft2,
}

fn fft_friendly(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl CbsWorkspace {
    pub fn new(speed: &SoundSpeedField, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let interior = *speed.grid();
        let h = interior.h;
        let omega = cfg.omega;
        let k_bg = omega / cfg.background_speed;
        let wavelength = TAU / k_bg;
        let pad = cfg.pad.unwrap_or_else(|| (wavelength / h).ceil() as usize);
        let absorber_nodes = (cfg.absorber.width_wavelengths * wavelength / h).ceil() as usize;
        let absorber_strength = if absorber_nodes == 0 {
            0.0
        } else {
            // quadratic ramp: ∫ α/(2k) ds over the layer = α_max L / (6k)
            6.0 * k_bg * cfg.absorber.decay_nepers / (absorber_nodes as f64 * h)
        };

        let offset = pad + absorber_nodes;
        let nx = fft_friendly(interior.nx + 2 * offset);
        let ny = fft_friendly(interior.ny + 2 * offset);
        let grid = Grid2D {
            nx,
            ny,
            h,
            origin: (interior.origin.0 - offset as f64 * h, interior.origin.1 - offset as f64 * h),
        };

        let k_bg_sq = k_bg * k_bg;
        // last index of the padded (non-absorbing) region along each axis
        let hi_x = (offset + interior.nx + pad - 1) as f64;
        let hi_y = (offset + interior.ny + pad - 1) as f64;
        let lo = absorber_nodes as f64;
        let mut k_sq = Vec::with_capacity(grid.len());
        for j in 0..ny {
            for i in 0..nx {
                let inside_x = i >= offset && i < offset + interior.nx;
                let inside_y = j >= offset && j < offset + interior.ny;
                if inside_x && inside_y {
                    let c = speed.values()[interior.index(i - offset, j - offset)];
                    k_sq.push(Complex64::new((omega / c).powi(2), 0.0));
                    continue;
                }
                let sx = (lo - i as f64).max(i as f64 - hi_x).max(0.0);
                let sy = (lo - j as f64).max(j as f64 - hi_y).max(0.0);
                let s = if absorber_nodes == 0 { 0.0 } else { (sx.hypot(sy) / lo).min(1.0) };
                k_sq.push(Complex64::new(k_bg_sq, absorber_strength * s * s));
            }
        }

        let (k0_sq, epsilon) = match cfg.k0_policy {
            K0Policy::Midpoint => choose_background_medium(&k_sq),
            K0Policy::Fixed { k0_sq, epsilon } => {
                let required = max_contrast(&k_sq, k0_sq);
                if !(epsilon >= required && epsilon > 0.0) {
                    return Err(Error::EpsilonTooSmall { epsilon, required });
                }
                (k0_sq, epsilon)
            }
        };

        let potential: Vec<Complex64> = k_sq.iter().map(|k| k - k0_sq - I * epsilon).collect();
        let precond: Vec<Complex64> = potential.iter().map(|v| I / epsilon * v).collect();

        let px = angular_frequencies(nx, h);
        let py = angular_frequencies(ny, h);
        let norm = (nx * ny) as f64;
        let mut greens = Vec::with_capacity(nx * ny);
        let mut laplacian = Vec::with_capacity(nx * ny);
        for &pxv in &px {
            for &pyv in &py {
                let p2 = pxv * pxv + pyv * pyv;
                greens.push(Complex64::new(p2 - k0_sq, -epsilon).inv() / norm);
                laplacian.push(-p2 / norm);
            }
        }

        Ok(Self {
            config: CbsConfig {
                k0_sq,
                epsilon,
                max_iters: cfg.max_iters,
                tol: cfg.tol,
                pad,
                absorber_nodes,
                absorber_strength,
            },
            omega,
            interior,
            grid,
            offset,
            k_sq,
            potential,
            precond,
            greens,
            laplacian,
            fft: Fft2::new(nx, ny),
        })
    }

    pub fn config(&self) -> &CbsConfig {
        &self.config
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// The periodic computational grid.
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn interior_grid(&self) -> &Grid2D {
        &self.interior
    }

    /// Complex k² on the computational grid, absorber included.
    pub fn k_sq(&self) -> &[Complex64] {
        &self.k_sq
    }

    pub fn potential(&self) -> ComplexField {
        ComplexField::from_values(self.grid, self.potential.clone()).unwrap()
    }

    pub fn preconditioner(&self) -> ComplexField {
        ComplexField::from_values(self.grid, self.precond.clone()).unwrap()
    }

    /// Green's multiplier `1/(|p|² − k0² − iε)` indexed `[kx * ny + ky]`.
    pub fn greens_multiplier(&self) -> Vec<Complex64> {
        let n = self.grid.len() as f64;
        self.greens.iter().map(|g| g * n).collect()
    }

    pub fn make_scratch(&self) -> Scratch {
        Scratch { fft: self.fft.make_scratch(), buf: vec![ZERO; self.grid.len()] }
    }

    /// Embed an interior-grid field into the computational grid (zero fill).
    pub fn embed(&self, field: &ComplexField) -> Result<ComplexField> {
        if field.grid() != &self.interior {
            return Err(Error::DimensionMismatch("field is not on the workspace's interior grid".into()));
        }
        let mut out = vec![ZERO; self.grid.len()];
        for j in 0..self.interior.ny {
            let src = &field.values()[j * self.interior.nx..(j + 1) * self.interior.nx];
            let start = self.grid.index(self.offset, j + self.offset);
            out[start..start + self.interior.nx].copy_from_slice(src);
        }
        ComplexField::from_values(self.grid, out)
    }

    pub fn extract_interior(&self, full: &[Complex64]) -> ComplexField {
        let mut values = Vec::with_capacity(self.interior.len());
        for j in 0..self.interior.ny {
            let start = self.grid.index(self.offset, j + self.offset);
            values.extend_from_slice(&full[start..start + self.interior.nx]);
        }
        ComplexField::from_values(self.interior, values).unwrap()
    }

    fn apply_diagonal(&self, input: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch, diag: impl Fn(usize) -> Complex64) {
        scratch.buf.copy_from_slice(input);
        let spec = self.fft.forward(&mut scratch.buf, &mut scratch.fft);
        for (k, s) in spec.iter_mut().enumerate() {
            *s *= diag(k);
        }
        self.fft.inverse(&mut scratch.fft, out);
    }

    fn greens_into(&self, input: &[Complex64], out: &mut [Complex64], scratch: &mut Scratch) {
        self.apply_diagonal(input, out, scratch, |k| self.greens[k]);
    }

    /// Apply the Green's operator to a field on the computational grid.
    pub fn greens_apply(&self, field: &ComplexField) -> Result<ComplexField> {
        if field.grid() != &self.grid {
            return Err(Error::DimensionMismatch("field is not on the computational grid".into()));
        }
        let mut scratch = self.make_scratch();
        let mut out = vec![ZERO; self.grid.len()];
        self.greens_into(field.values(), &mut out, &mut scratch);
        ComplexField::from_values(self.grid, out)
    }

    /// Spectral Laplacian of a field on the computational grid.
    pub fn laplacian_apply(&self, field: &ComplexField) -> Result<ComplexField> {
        if field.grid() != &self.grid {
            return Err(Error::DimensionMismatch("field is not on the computational grid".into()));
        }
        let mut scratch = self.make_scratch();
        let mut out = vec![ZERO; self.grid.len()];
        self.apply_diagonal(field.values(), &mut out, &mut scratch, |k| Complex64::new(self.laplacian[k], 0.0));
        ComplexField::from_values(self.grid, out)
    }

    /// `Q G ρ` for a source already on the computational grid.
    pub fn source_term(&self, rho_full: &[Complex64], scratch: &mut Scratch) -> Vec<Complex64> {
        let mut g = vec![ZERO; self.grid.len()];
        self.greens_into(rho_full, &mut g, scratch);
        g.iter_mut().zip(&self.precond).for_each(|(g, q)| *g *= q);
        g
    }

    /// Run the iteration from `initial` (zero if `None`) with a
    /// precomputed `Q G ρ`.
    pub fn iterate(
        &self,
        qg_rho: &[Complex64],
        initial: Option<&[Complex64]>,
        scratch: &mut Scratch,
    ) -> (Vec<Complex64>, SolveReport) {
        let n = self.grid.len();
        let eps = self.config.epsilon;
        let minus_i_eps = Complex64::new(0.0, -eps);
        let mut y = initial.map(<[Complex64]>::to_vec).unwrap_or_else(|| vec![ZERO; n]);
        let mut qy = vec![ZERO; n];
        let mut gqy = vec![ZERO; n];
        let mut history = Vec::new();
        let mut rel = f64::INFINITY;
        let mut iterations = 0;
        let mut applications = 1u64;
        while iterations < self.config.max_iters {
            for ((o, q), v) in qy.iter_mut().zip(&self.precond).zip(&y) {
                *o = q * v;
            }
            self.greens_into(&qy, &mut gqy, scratch);
            applications += 1;
            let mut diff = 0.0;
            let mut total = 0.0;
            for k in 0..n {
                let next = minus_i_eps * self.precond[k] * gqy[k] - qy[k] + y[k] + qg_rho[k];
                diff += (next - y[k]).norm_sqr();
                total += next.norm_sqr();
                y[k] = next;
            }
            iterations += 1;
            rel = if total == 0.0 { if diff == 0.0 { 0.0 } else { f64::INFINITY } } else { (diff / total).sqrt() };
            history.push(rel);
            if rel <= self.config.tol {
                break;
            }
        }
        let report = SolveReport {
            iterations_used: iterations,
            final_rel_update: rel,
            converged: rel <= self.config.tol,
            npe_count: 1,
            greens_applications: applications,
            rel_update_history: history,
        };
        (y, report)
    }

    /// Solve for an interior-grid source.
    pub fn solve(&self, source: &ComplexField) -> Result<(Wavefield, SolveReport)> {
        self.solve_from(source, None)
    }

    /// Solve starting from a previous computational-grid wavefield.
    pub fn solve_from(&self, source: &ComplexField, initial: Option<&ComplexField>) -> Result<(Wavefield, SolveReport)> {
        let rho = self.embed(source)?;
        if let Some(init) = initial {
            if init.grid() != &self.grid {
                return Err(Error::DimensionMismatch("initial guess is not on the computational grid".into()));
            }
        }
        let mut scratch = self.make_scratch();
        let qg = self.source_term(rho.values(), &mut scratch);
        let (y, report) = self.iterate(&qg, initial.map(|f| f.values()), &mut scratch);
        Ok((self.wavefield(y), report))
    }

    fn wavefield(&self, y: Vec<Complex64>) -> Wavefield {
        let interior = self.extract_interior(&y);
        Wavefield { full: ComplexField::from_values(self.grid, y).unwrap(), interior }
    }

    /// `‖∇²Y + k²Y + ρ‖₂ / ‖ρ‖₂` over interior nodes, with the spectral
    /// Laplacian evaluated on the full computational field. Returns the
    /// absolute residual norm when ρ vanishes.
    pub fn residual(&self, wavefield: &ComplexField, source: &ComplexField) -> Result<f64> {
        let rho = self.embed(source)?;
        let lap = self.laplacian_apply(wavefield)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in self.offset..self.offset + self.interior.ny {
            for i in self.offset..self.offset + self.interior.nx {
                let k = self.grid.index(i, j);
                let r = lap.values()[k] + self.k_sq[k] * wavefield.values()[k] + rho.values()[k];
                num += r.norm_sqr();
                den += rho.values()[k].norm_sqr();
            }
        }
        Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
    }
}

/// Per-solve scratch memory; one per in-flight solve.
pub struct Scratch {
    fft: Fft2Scratch,
    buf: Vec<Complex64>,
}

/// One-shot solve: build the workspace for `speed` and solve for `source`.
pub fn cbs_solve(speed: &SoundSpeedField, source: &ComplexField, cfg: &SolverConfig) -> Result<(Wavefield, SolveReport)> {
    CbsWorkspace::new(speed, cfg)?.solve(source)
}

pub fn residual_check(workspace: &CbsWorkspace, wavefield: &Wavefield, source: &ComplexField) -> Result<f64> {
    workspace.residual(&wavefield.full, source)
}

/// How batched solves pick the Green's operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    /// Each medium gets its own k0 and ε; results equal independent solves.
    #[default]
    PerSpeed,
    /// One k0 and ε covering every medium, so `G ρ` is shared across media.
    Shared,
}

/// Result of a batched solve over `media × sources`.
#[derive(Debug, Clone)]
pub struct BatchSolution {
    /// `fields[i][n]` for medium i and source n.
    pub fields: Vec<Vec<Wavefield>>,
    pub reports: Vec<Vec<SolveReport>>,
    pub workspaces: Vec<CbsWorkspace>,
    /// A batched solve over all sources counts as one PDE evaluation.
    pub npe: u64,
}

impl BatchSolution {
    pub fn all_converged(&self) -> bool {
        self.reports.iter().flatten().all(|r| r.converged)
    }

    pub fn max_iterations(&self) -> usize {
        self.reports.iter().flatten().map(|r| r.iterations_used).max().unwrap_or(0)
    }
}

/// Batched CBS over every (medium, source) pair.
///
/// The workspace (and therefore `M`) is built once per medium, and `G ρ`
/// once per source under [`BatchPolicy::Shared`]. Pairs are processed in
/// tiles of `cfg.chunk_size`; tiling and thread scheduling do not change
/// the results. `initial`, when given, warm-starts pair `(i, n)` from
/// `initial[i][n]`.
pub fn bcbs_solve(
    speeds: &[SoundSpeedField],
    sources: &[ComplexField],
    cfg: &SolverConfig,
    policy: BatchPolicy,
    initial: Option<&[Vec<Wavefield>]>,
) -> Result<BatchSolution> {
    cfg.validate()?;
    if speeds.is_empty() {
        return Err(Error::InvalidConfig("batch needs at least one medium".into()));
    }
    let grid = *speeds[0].grid();
    if speeds.iter().any(|s| s.grid() != &grid) {
        return Err(Error::DimensionMismatch("all media in a batch must share one grid".into()));
    }
    if sources.iter().any(|s| s.grid() != &grid) {
        return Err(Error::DimensionMismatch("sources must live on the media grid".into()));
    }

    let workspaces: Vec<CbsWorkspace> = match policy {
        BatchPolicy::PerSpeed => speeds.iter().map(|s| CbsWorkspace::new(s, cfg)).collect::<Result<_>>()?,
        BatchPolicy::Shared => {
            let probes: Vec<CbsWorkspace> = speeds.iter().map(|s| CbsWorkspace::new(s, cfg)).collect::<Result<_>>()?;
            let all: Vec<Complex64> = probes.iter().flat_map(|w| w.k_sq.iter().copied()).collect();
            let (k0_sq, epsilon) = choose_background_medium(&all);
            let shared = SolverConfig { k0_policy: K0Policy::Fixed { k0_sq, epsilon }, ..cfg.clone() };
            speeds.iter().map(|s| CbsWorkspace::new(s, &shared)).collect::<Result<_>>()?
        }
    };
    if let Some(init) = initial {
        if init.len() != speeds.len() || init.iter().any(|row| row.len() != sources.len()) {
            return Err(Error::DimensionMismatch("initial wavefields must be media x sources".into()));
        }
    }

    let embedded: Vec<ComplexField> = sources.iter().map(|s| workspaces[0].embed(s)).collect::<Result<_>>()?;
    let shared_g: Option<Vec<Vec<Complex64>>> = match policy {
        BatchPolicy::Shared => {
            let mut scratch = workspaces[0].make_scratch();
            Some(
                embedded
                    .iter()
                    .map(|rho| {
                        let mut g = vec![ZERO; workspaces[0].grid.len()];
                        workspaces[0].greens_into(rho.values(), &mut g, &mut scratch);
                        g
                    })
                    .collect(),
            )
        }
        BatchPolicy::PerSpeed => None,
    };

    let pairs: Vec<(usize, usize)> =
        (0..speeds.len()).flat_map(|i| (0..sources.len()).map(move |n| (i, n))).collect();
    let mut results: Vec<(Wavefield, SolveReport)> = Vec::with_capacity(pairs.len());
    for tile in pairs.chunks(cfg.chunk_size) {
        let solved: Vec<(Wavefield, SolveReport)> = tile
            .par_iter()
            .map(|&(i, n)| {
                let ws = &workspaces[i];
                let mut scratch = ws.make_scratch();
                let qg = match &shared_g {
                    Some(g) => g[n].iter().zip(&ws.precond).map(|(g, q)| q * g).collect(),
                    None => ws.source_term(embedded[n].values(), &mut scratch),
                };
                let init = initial.map(|w| w[i][n].full.values());
                let (y, mut report) = ws.iterate(&qg, init, &mut scratch);
                report.npe_count = 0;
                (ws.wavefield(y), report)
            })
            .collect();
        results.extend(solved);
    }

    let mut fields = Vec::with_capacity(speeds.len());
    let mut reports = Vec::with_capacity(speeds.len());
    let mut it = results.into_iter();
    for _ in 0..speeds.len() {
        let (f, r): (Vec<_>, Vec<_>) = it.by_ref().take(sources.len()).unzip();
        fields.push(f);
        reports.push(r);
    }
    Ok(BatchSolution { fields, reports, workspaces, npe: 1 })
}
