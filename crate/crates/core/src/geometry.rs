//! Transducer rings, point sources, receiver sampling and measurement noise.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cbs::{bcbs_solve, BatchPolicy, BatchSolution, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid2D, SoundSpeedField};

/// Ring diameter of the reference acquisition system (m).
pub const PAPER_RING_DIAMETER: f64 = 0.220;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum View {
    FullRing { count: usize },
    SparseRing { count: usize },
    /// `count` elements spread evenly over `arc_fraction` of the ring,
    /// centered on `facing_angle` (radians, counter-clockwise from +x).
    PartialArc { count: usize, arc_fraction: f64, facing_angle: f64 },
}

impl View {
    pub fn count(&self) -> usize {
        match *self {
            View::FullRing { count } | View::SparseRing { count } | View::PartialArc { count, .. } => count,
        }
    }

    /// The five reference configurations by name: `full`, `sparse-1`,
    /// `sparse-2`, `partial-1`, `partial-2`. Counts are divided by `scale`
    /// for reduced desk-scale experiments (`scale = 1` gives 256/64/32/64/32).
    pub fn named(name: &str, scale: usize, facing_angle: f64) -> Result<View> {
        let scale = scale.max(1);
        let c = |n: usize| (n / scale).max(1);
        Ok(match name {
            "full" => View::FullRing { count: c(256) },
            "sparse-1" => View::SparseRing { count: c(64) },
            "sparse-2" => View::SparseRing { count: c(32) },
            "partial-1" => View::PartialArc { count: c(64), arc_fraction: 0.25, facing_angle },
            "partial-2" => View::PartialArc { count: c(32), arc_fraction: 0.125, facing_angle },
            other => return Err(Error::InvalidConfig(format!("unknown view '{other}'"))),
        })
    }

    pub fn with_count(self, count: usize) -> View {
        match self {
            View::FullRing { .. } => View::FullRing { count },
            View::SparseRing { .. } => View::SparseRing { count },
            View::PartialArc { arc_fraction, facing_angle, .. } => View::PartialArc { count, arc_fraction, facing_angle },
        }
    }

    pub const NAMES: [&'static str; 5] = ["full", "sparse-1", "sparse-2", "partial-1", "partial-2"];
}

/// Co-located sources and receivers on a circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerArray {
    pub positions: Vec<(f64, f64)>,
    pub ring_radius: f64,
    pub center: (f64, f64),
    pub view: View,
}

impl TransducerArray {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.positions.iter().map(|p| (p.1 - self.center.1).atan2(p.0 - self.center.0)).collect()
    }
}

pub fn build_array(view: View, ring_diameter: f64, center: (f64, f64)) -> Result<TransducerArray> {
    if !(ring_diameter > 0.0 && ring_diameter.is_finite()) {
        return Err(Error::InvalidConfig(format!("ring diameter must be positive, got {ring_diameter}")));
    }
    let count = view.count();
    if count == 0 {
        return Err(Error::InvalidConfig("transducer count must be at least 1".into()));
    }
    let angles: Vec<f64> = match view {
        View::FullRing { count } | View::SparseRing { count } => {
            (0..count).map(|k| TAU * k as f64 / count as f64).collect()
        }
        View::PartialArc { count, arc_fraction, facing_angle } => {
            if !(arc_fraction > 0.0 && arc_fraction <= 1.0) {
                return Err(Error::InvalidConfig(format!("arc fraction {arc_fraction} must be in (0, 1]")));
            }
            if !facing_angle.is_finite() {
                return Err(Error::InvalidConfig("facing angle must be finite".into()));
            }
            let span = arc_fraction * TAU;
            if count == 1 {
                vec![facing_angle]
            } else if arc_fraction == 1.0 {
                // a closed arc would place the end points on top of each other
                (0..count).map(|k| facing_angle - PI + span * k as f64 / count as f64).collect()
            } else {
                (0..count).map(|k| facing_angle - 0.5 * span + span * k as f64 / (count - 1) as f64).collect()
            }
        }
    };
    let r = 0.5 * ring_diameter;
    let positions = angles.iter().map(|a| (center.0 + r * a.cos(), center.1 + r * a.sin())).collect();
    Ok(TransducerArray { positions, ring_radius: r, center, view })
}

/// Discretized point source on the speed grid.
///
/// The unit impulse is distributed with the transposed bilinear weights of
/// [`sample_receivers`], scaled by `1/h²`, so the discrete integral
/// `Σ ρ h²` equals one and injection is the exact adjoint of sampling. A
/// position on a node yields a single impulse of `1/h²` at that node.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    pub field: ComplexField,
    pub source_index: usize,
    pub nominal_position: (f64, f64),
}

pub fn make_source(array: &TransducerArray, n: usize, grid: &Grid2D) -> Result<SourceTerm> {
    let pos = *array
        .positions
        .get(n)
        .ok_or_else(|| Error::InvalidConfig(format!("source index {n} out of range for {} transducers", array.len())))?;
    let stencil = grid.bilinear_stencil(pos)?;
    let mut field = ComplexField::zeros(*grid);
    let scale = 1.0 / (grid.h * grid.h);
    for (idx, w) in stencil {
        field.values_mut()[idx] += Complex64::new(w * scale, 0.0);
    }
    Ok(SourceTerm { field, source_index: n, nominal_position: pos })
}

pub fn make_sources(array: &TransducerArray, grid: &Grid2D) -> Result<Vec<SourceTerm>> {
    (0..array.len()).map(|n| make_source(array, n, grid)).collect()
}

pub fn sample_receivers(wavefield: &ComplexField, array: &TransducerArray) -> Result<Vec<Complex64>> {
    array.positions.iter().map(|&p| wavefield.sample(p)).collect()
}

/// Complex receiver-by-source data, entry `(m, n)` at `values[m * N + n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    pub receivers: usize,
    pub sources: usize,
    pub values: Vec<Complex64>,
    pub snr_db: Option<f64>,
    pub omega: f64,
}

impl MeasurementMatrix {
    pub fn new(receivers: usize, sources: usize, values: Vec<Complex64>, omega: f64) -> Result<Self> {
        if values.len() != receivers * sources {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {receivers}x{sources} matrix",
                values.len()
            )));
        }
        Ok(Self { receivers, sources, values, snr_db: None, omega })
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.values[m * self.sources + n]
    }

    pub fn power(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.values.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Add circular complex Gaussian noise at a global SNR.
///
/// Noise variance is `mean|y|² / 10^(snr_db/10)`; `snr_db = +inf` leaves the
/// data unchanged.
pub fn add_noise(matrix: &MeasurementMatrix, snr_db: f64, seed: u64) -> MeasurementMatrix {
    let mut out = matrix.clone();
    out.snr_db = Some(snr_db);
    if snr_db == f64::INFINITY {
        return out;
    }
    let sigma = (matrix.power() / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(sigma * re, sigma * im);
    }
    out
}

/// Receiver samples of every wavefield in a batch row.
pub fn measurements_from(fields: &[crate::cbs::Wavefield], array: &TransducerArray, omega: f64) -> Result<MeasurementMatrix> {
    let n_src = fields.len();
    let m_rec = array.len();
    let mut values = vec![Complex64::new(0.0, 0.0); m_rec * n_src];
    for (n, w) in fields.iter().enumerate() {
        for (m, v) in sample_receivers(&w.interior, array)?.into_iter().enumerate() {
            values[m * n_src + n] = v;
        }
    }
    MeasurementMatrix::new(m_rec, n_src, values, omega)
}

/// Simulate noise-free data for every source of `array`.
pub fn forward_simulate(
    speed: &SoundSpeedField,
    array: &TransducerArray,
    cfg: &SolverConfig,
) -> Result<(MeasurementMatrix, BatchSolution)> {
    let sources: Vec<ComplexField> = make_sources(array, speed.grid())?.into_iter().map(|s| s.field).collect();
    let batch = bcbs_solve(std::slice::from_ref(speed), &sources, cfg, BatchPolicy::PerSpeed, None)?;
    let data = measurements_from(&batch.fields[0], array, cfg.omega)?;
    Ok((data, batch))
}
