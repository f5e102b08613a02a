//! Synthetic sound-speed phantoms.
//!
//! A phantom is a constant background with a superposition of smooth disc
//! inclusions confined to a circular region of interest (ROI) about the
//! grid center. Each inclusion has a flat core and a raised-cosine edge.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, RealField, SoundSpeedField};

pub const BACKGROUND_SPEED: f64 = 1500.0;
pub const SPEED_BOUNDS: (f64, f64) = (1408.0, 1595.0);
/// Default ROI radius as a fraction of half the smaller grid extent.
pub const DEFAULT_ROI_FRACTION: f64 = 0.765;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    /// Physical center (m).
    pub center: (f64, f64),
    /// Radius to the middle of the tapered edge (m).
    pub radius: f64,
    /// Speed offset from the background at the core (m/s).
    pub amplitude: f64,
    /// Width of the cosine taper (m).
    pub edge_smoothness: f64,
}

impl Inclusion {
    /// Offset contributed at distance `r` from the center.
    pub fn profile(&self, r: f64) -> f64 {
        let w = self.edge_smoothness;
        let inner = self.radius - 0.5 * w;
        let outer = self.radius + 0.5 * w;
        if r <= inner {
            self.amplitude
        } else if r >= outer {
            0.0
        } else {
            0.5 * self.amplitude * (1.0 + (std::f64::consts::PI * (r - inner) / w).cos())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub background: f64,
    /// ROI disc radius as a fraction of half the smaller grid extent.
    pub roi_radius_fraction: f64,
    pub inclusions: Vec<Inclusion>,
    pub seed: u64,
    pub speed_bounds: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            background: BACKGROUND_SPEED,
            roi_radius_fraction: DEFAULT_ROI_FRACTION,
            inclusions: Vec::new(),
            seed: 0,
            speed_bounds: SPEED_BOUNDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScatteringClass {
    Weak,
    Strong,
}

impl ScatteringClass {
    pub fn amplitude_range(self) -> (f64, f64) {
        match self {
            ScatteringClass::Weak => (-30.0, 30.0),
            ScatteringClass::Strong => (-92.0, 95.0),
        }
    }

    fn stream(self) -> u64 {
        match self {
            ScatteringClass::Weak => 1,
            ScatteringClass::Strong => 2,
        }
    }
}

impl std::str::FromStr for ScatteringClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Self::Weak),
            "strong" => Ok(Self::Strong),
            other => Err(Error::InvalidConfig(format!("unknown phantom class '{other}'"))),
        }
    }
}

/// ROI disc `(center, radius)` for a grid and fraction.
pub fn roi_disc(grid: &Grid2D, roi_radius_fraction: f64) -> ((f64, f64), f64) {
    let (ex, ey) = grid.extent();
    (grid.center(), roi_radius_fraction * 0.5 * ex.min(ey))
}

/// Boolean ROI mask over the grid nodes.
pub fn roi_mask(grid: &Grid2D, roi_radius_fraction: f64) -> Vec<bool> {
    let (c, r) = roi_disc(grid, roi_radius_fraction);
    let mut mask = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let p = grid.node(i, j);
            mask.push((p.0 - c.0).hypot(p.1 - c.1) <= r);
        }
    }
    mask
}

impl PhantomSpec {
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        let (lo, hi) = self.speed_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("speed bounds ({lo}, {hi}) are invalid")));
        }
        if !(self.background >= lo && self.background <= hi) {
            return Err(Error::InvalidConfig(format!(
                "background {} lies outside bounds ({lo}, {hi})",
                self.background
            )));
        }
        if !(self.roi_radius_fraction > 0.0 && self.roi_radius_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "roi_radius_fraction {} must be in (0, 1]",
                self.roi_radius_fraction
            )));
        }
        let (c, r) = roi_disc(grid, self.roi_radius_fraction);
        for (k, inc) in self.inclusions.iter().enumerate() {
            if !(inc.radius > 0.0 && inc.edge_smoothness > 0.0 && inc.edge_smoothness <= 2.0 * inc.radius) {
                return Err(Error::InvalidConfig(format!(
                    "inclusion {k}: radius and edge width must be positive with edge <= 2 * radius"
                )));
            }
            if !inc.amplitude.is_finite() {
                return Err(Error::InvalidConfig(format!("inclusion {k}: amplitude is not finite")));
            }
            if (inc.center.0 - c.0).hypot(inc.center.1 - c.1) > r {
                return Err(Error::InvalidConfig(format!("inclusion {k}: center lies outside the ROI")));
            }
        }
        Ok(())
    }
}

pub fn generate_phantom(spec: &PhantomSpec, grid: &Grid2D) -> Result<SoundSpeedField> {
    spec.validate(grid)?;
    let (lo, hi) = spec.speed_bounds;
    let mask = roi_mask(grid, spec.roi_radius_fraction);
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if !mask[grid.index(i, j)] {
                values.push(spec.background);
                continue;
            }
            let p = grid.node(i, j);
            let offset: f64 = spec
                .inclusions
                .iter()
                .map(|inc| inc.profile((p.0 - inc.center.0).hypot(p.1 - inc.center.1)))
                .sum();
            values.push((spec.background + offset).clamp(lo, hi));
        }
    }
    SoundSpeedField::new(RealField::from_values(*grid, values)?)
}

/// Random spec with 3 to 8 inclusions drawn for the given contrast class.
pub fn random_spec(seed: u64, grid: &Grid2D, class: ScatteringClass) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class.stream());
    let base = PhantomSpec { seed, ..PhantomSpec::default() };
    let (c, roi) = roi_disc(grid, base.roi_radius_fraction);
    let (amp_lo, amp_hi) = class.amplitude_range();
    let count = rng.gen_range(3..=8);
    let inclusions = (0..count)
        .map(|_| {
            let radius = roi * rng.gen_range(0.12..0.35);
            let edge_smoothness = radius * rng.gen_range(0.3..0.8);
            // keep the whole taper inside the ROI
            let reach = (roi - radius - 0.5 * edge_smoothness).max(0.0);
            let dist = reach * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            Inclusion {
                center: (c.0 + dist * theta.cos(), c.1 + dist * theta.sin()),
                radius,
                amplitude: rng.gen_range(amp_lo..=amp_hi),
                edge_smoothness,
            }
        })
        .collect();
    let speed_bounds = match class {
        ScatteringClass::Weak => (base.background + amp_lo, base.background + amp_hi),
        ScatteringClass::Strong => SPEED_BOUNDS,
    };
    PhantomSpec { inclusions, speed_bounds, ..base }
}

pub fn random_phantom(seed: u64, grid: &Grid2D, class: ScatteringClass) -> SoundSpeedField {
    generate_phantom(&random_spec(seed, grid, class), grid).expect("random specs are valid by construction")
}
