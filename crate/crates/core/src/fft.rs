//! 2D FFT on row-major grids built from 1D rustfft plans.
//!
//! The forward transform leaves the spectrum *transposed*: entry
//! `kx * ny + ky` holds mode `(kx, ky)`. Diagonal operators are applied in
//! that layout and the inverse transform undoes the transpose, which saves
//! two transposes per round trip.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    nx: usize,
    ny: usize,
    x_fwd: Arc<dyn Fft<f64>>,
    x_inv: Arc<dyn Fft<f64>>,
    y_fwd: Arc<dyn Fft<f64>>,
    y_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

/// Per-caller scratch memory for [`Fft2`].
pub struct Fft2Scratch {
    transposed: Vec<Complex64>,
    fft: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nx,
            ny,
            x_fwd: planner.plan_fft_forward(nx),
            x_inv: planner.plan_fft_inverse(nx),
            y_fwd: planner.plan_fft_forward(ny),
            y_inv: planner.plan_fft_inverse(ny),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn make_scratch(&self) -> Fft2Scratch {
        let fft_len = [&self.x_fwd, &self.x_inv, &self.y_fwd, &self.y_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Fft2Scratch {
            transposed: vec![Complex64::new(0.0, 0.0); self.len()],
            fft: vec![Complex64::new(0.0, 0.0); fft_len],
        }
    }

    /// Unnormalized forward transform of `data` (row-major `[ny][nx]`);
    /// the spectrum is written to `scratch` in transposed layout and
    /// `data` is left as scratch space.
    pub fn forward<'s>(&self, data: &mut [Complex64], scratch: &'s mut Fft2Scratch) -> &'s mut [Complex64] {
        debug_assert_eq!(data.len(), self.len());
        self.x_fwd.process_with_scratch(data, &mut scratch.fft);
        transpose(data, &mut scratch.transposed, self.nx, self.ny);
        self.y_fwd.process_with_scratch(&mut scratch.transposed, &mut scratch.fft);
        &mut scratch.transposed
    }

    /// Unnormalized inverse of the spectrum held in `scratch` (as left by
    /// [`Fft2::forward`]); the spatial result is written to `out`.
    pub fn inverse(&self, scratch: &mut Fft2Scratch, out: &mut [Complex64]) {
        debug_assert_eq!(out.len(), self.len());
        self.y_inv.process_with_scratch(&mut scratch.transposed, &mut scratch.fft);
        transpose(&scratch.transposed, out, self.ny, self.nx);
        self.x_inv.process_with_scratch(out, &mut scratch.fft);
    }
}

/// `src` is `rows x cols` row-major; `dst` becomes `cols x rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Angular spatial frequencies `2 pi f` of an `n`-point DFT with spacing `h`.
pub fn angular_frequencies(n: usize, h: f64) -> Vec<f64> {
    let len = n as f64 * h;
    (0..n)
        .map(|q| {
            let signed = if q <= n / 2 { q as f64 } else { q as f64 - n as f64 };
            TAU * signed / len
        })
        .collect()
}
