//! Experiment configuration shared by the command-line tool and the tests,
//! plus the JSON sidecars written next to field and data containers.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cbs::{SolverConfig, DEFAULT_FREQUENCY_HZ};
use crate::container::{Array, ArrayData};
use crate::error::{Error, Result};
use crate::geometry::{build_array, MeasurementMatrix, TransducerArray, View};
use crate::grid::{Grid2D, SoundSpeedField};
use crate::inversion::{InversionConfig, Optimizer, StopCriteria};
use crate::phantom::{generate_phantom, random_spec, PhantomSpec, ScatteringClass, BACKGROUND_SPEED, SPEED_BOUNDS};

/// Desk-scale ring diameter as a fraction of the smaller grid extent.
pub const DESK_RING_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    /// Node spacing (m).
    pub h: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 96, ny: 96, h: 5e-4 }
    }
}

impl GridConfig {
    /// The grid centered on the origin.
    pub fn build(&self) -> Result<Grid2D> {
        Grid2D::centered(self.nx, self.ny, self.h, (0.0, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    /// One of `full`, `sparse-1`, `sparse-2`, `partial-1`, `partial-2`.
    pub view: String,
    /// Transducer count; `None` takes the reference count of the view.
    pub count: Option<usize>,
    /// Ring diameter (m); `None` uses 90% of the smaller grid extent.
    pub ring_diameter: Option<f64>,
    /// Arc center for partial views (radians).
    pub facing_angle: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { view: "full".into(), count: Some(16), ring_diameter: None, facing_angle: 0.0 }
    }
}

impl ArrayConfig {
    pub fn view(&self) -> Result<View> {
        let view = View::named(&self.view, 1, self.facing_angle)?;
        Ok(match self.count {
            Some(count) => view.with_count(count),
            None => view,
        })
    }

    pub fn ring_diameter(&self, grid: &Grid2D) -> f64 {
        let (ex, ey) = grid.extent();
        self.ring_diameter.unwrap_or(DESK_RING_FRACTION * ex.min(ey))
    }

    pub fn build(&self, grid: &Grid2D) -> Result<TransducerArray> {
        build_array(self.view()?, self.ring_diameter(grid), grid.center())
    }
}

/// Where the true medium comes from: a file, an explicit spec, or a
/// seeded random draw of the given class (checked in that order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub class: ScatteringClass,
    pub seed: u64,
    pub spec: Option<PhantomSpec>,
    pub path: Option<PathBuf>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { class: ScatteringClass::Weak, seed: 0, spec: None, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// `None` for noise-free data.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { snr_db: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Padding in nodes; `None` is one background wavelength.
    pub pad: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self { tol: base.tol, max_iters: base.max_iters, pad: base.pad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSettings {
    pub optimizer: Optimizer,
    pub max_outer: usize,
    /// Discrepancy-principle factor; ignored for noise-free data.
    pub discrepancy: Option<f64>,
    pub warm_start: bool,
    pub illumination_preconditioning: bool,
}

impl Default for InversionSettings {
    fn default() -> Self {
        let base = InversionConfig::default();
        Self {
            optimizer: base.optimizer,
            max_outer: base.stop.max_outer,
            discrepancy: None,
            warm_start: base.warm_start,
            illumination_preconditioning: base.illumination_preconditioning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub frequency_hz: f64,
    pub array: ArrayConfig,
    pub phantom: PhantomConfig,
    pub noise: NoiseConfig,
    pub solver: SolverSettings,
    pub inversion: InversionSettings,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            frequency_hz: DEFAULT_FREQUENCY_HZ,
            array: ArrayConfig::default(),
            phantom: PhantomConfig::default(),
            noise: NoiseConfig::default(),
            solver: SolverSettings::default(),
            inversion: InversionSettings::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(Error::InvalidConfig(format!("frequency_hz must be positive, got {}", self.frequency_hz)));
        }
        let grid = self.grid.build()?;
        self.array.build(&grid)?;
        if let Some(spec) = &self.phantom.spec {
            spec.validate(&grid)?;
        }
        if let Some(snr) = self.noise.snr_db {
            if snr.is_nan() {
                return Err(Error::InvalidConfig("snr_db must be a number".into()));
            }
        }
        self.solver_config().validate()?;
        self.inversion_config().validate()
    }

    pub fn omega(&self) -> f64 {
        TAU * self.frequency_hz
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            omega: self.omega(),
            tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            pad: self.solver.pad,
            ..SolverConfig::default()
        }
    }

    pub fn inversion_config(&self) -> InversionConfig {
        let s = &self.inversion;
        InversionConfig {
            optimizer: s.optimizer,
            stop: StopCriteria { max_outer: s.max_outer, discrepancy: s.discrepancy, ..StopCriteria::default() },
            warm_start: s.warm_start,
            illumination_preconditioning: s.illumination_preconditioning,
            ..InversionConfig::default()
        }
    }

    /// The true medium and, unless it was read from a file, its spec.
    pub fn phantom(&self, grid: &Grid2D) -> Result<(SoundSpeedField, Option<PhantomSpec>)> {
        let p = &self.phantom;
        if let Some(path) = &p.path {
            return Ok((read_speed(path, *grid)?, None));
        }
        let spec = match &p.spec {
            Some(spec) => spec.clone(),
            None => random_spec(p.seed, grid, p.class),
        };
        Ok((generate_phantom(&spec, grid)?, Some(spec)))
    }
}

/// Sidecar path: the container path with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_speed(path: impl AsRef<Path>, grid: Grid2D) -> Result<SoundSpeedField> {
    SoundSpeedField::new(Array::read(path)?.into_real_field(grid)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: (f64, f64),
}

impl From<&Grid2D> for GridRecord {
    fn from(g: &Grid2D) -> Self {
        Self { nx: g.nx, ny: g.ny, h: g.h, origin: g.origin }
    }
}

impl GridRecord {
    pub fn build(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny, self.h, self.origin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSidecar {
    pub grid: GridRecord,
    pub class: ScatteringClass,
    pub seed: u64,
    pub spec: Option<PhantomSpec>,
    /// Physical speed range of all phantoms (the inversion box).
    pub speed_bounds: (f64, f64),
    pub background: f64,
}

impl PhantomSidecar {
    pub fn new(grid: &Grid2D, config: &PhantomConfig, spec: Option<PhantomSpec>) -> Self {
        Self {
            grid: grid.into(),
            class: config.class,
            seed: config.seed,
            speed_bounds: SPEED_BOUNDS,
            background: spec.as_ref().map_or(BACKGROUND_SPEED, |s| s.background),
            spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConvergence {
    pub source: usize,
    pub iterations: usize,
    pub final_rel_update: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSidecar {
    pub omega: f64,
    pub frequency_hz: f64,
    /// `None` for noise-free data.
    pub snr_db: Option<f64>,
    pub view: View,
    pub ring_diameter: f64,
    /// Noise seed.
    pub seed: u64,
    pub grid: GridRecord,
    pub solves: Vec<SourceConvergence>,
}

impl MeasurementSidecar {
    pub fn array(&self) -> Result<TransducerArray> {
        build_array(self.view, self.ring_diameter, self.grid.build()?.center())
    }

    /// Rebuild the measurement matrix from its `[M, N]` container.
    pub fn matrix(&self, container: Array) -> Result<MeasurementMatrix> {
        let (rows, cols) = match container.dims[..] {
            [r, c] => (r, c),
            _ => return Err(Error::DimensionMismatch(format!("measurement container has dims {:?}", container.dims))),
        };
        let ArrayData::Complex(values) = container.data else {
            return Err(Error::DimensionMismatch("measurements need a complex128 payload".into()));
        };
        let mut m = MeasurementMatrix::new(rows, cols, values, self.omega)?;
        m.snr_db = self.snr_db;
        Ok(m)
    }
}

/// `[M, N]` complex container of a measurement matrix.
pub fn matrix_container(m: &MeasurementMatrix) -> Array {
    Array { dims: vec![m.receivers, m.sources], data: ArrayData::Complex(m.values.clone()) }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}
