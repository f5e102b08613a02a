#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usct::cbs::SolverConfig;
use usct::geometry::{build_array, TransducerArray, View};
use usct::grid::{ComplexField, Grid2D, RealField, SoundSpeedField};

pub const DESK_N: usize = 96;
pub const DESK_H: f64 = 5e-4;

pub fn desk_grid() -> Grid2D {
    Grid2D::centered(DESK_N, DESK_N, DESK_H, (0.0, 0.0)).unwrap()
}

/// Ring diameter used at desk scale: 90% of the grid extent.
pub fn desk_ring_diameter(grid: &Grid2D) -> f64 {
    0.9 * grid.extent().0.min(grid.extent().1)
}

pub fn desk_array(grid: &Grid2D, view: View) -> TransducerArray {
    build_array(view, desk_ring_diameter(grid), grid.center()).unwrap()
}

pub fn tight(tol: f64) -> SolverConfig {
    SolverConfig::default().with_tol(tol).with_max_iters(5000)
}

pub fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

pub fn random_complex(grid: Grid2D, seed: u64) -> ComplexField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..grid.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    ComplexField::from_values(grid, vals).unwrap()
}

/// Random speeds in `[lo, hi]` inside a border of `border` background nodes.
pub fn random_medium(grid: Grid2D, seed: u64, border: usize, lo: f64, hi: f64) -> SoundSpeedField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals = vec![1500.0; grid.len()];
    for j in border..grid.ny - border {
        for i in border..grid.nx - border {
            vals[grid.index(i, j)] = rng.gen_range(lo..hi);
        }
    }
    SoundSpeedField::new(RealField::from_values(grid, vals).unwrap()).unwrap()
}
