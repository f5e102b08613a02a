//! Image-quality metrics for reconstructed sound-speed maps.

use crate::error::{Error, Result};
use crate::grid::RealField;
use crate::phantom::SPEED_BOUNDS;

/// Default dynamic range: the width of the phantom speed bounds (187 m/s).
pub const DEFAULT_DATA_RANGE: f64 = SPEED_BOUNDS.1 - SPEED_BOUNDS.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_grid(a: &RealField, b: &RealField) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::DimensionMismatch("metric inputs must share a grid".into()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `+inf` when the fields are identical.
pub fn psnr(reconstruction: &RealField, truth: &RealField, data_range: f64) -> Result<f64> {
    same_grid(reconstruction, truth)?;
    let n = truth.values().len() as f64;
    let mse = reconstruction.values().iter().zip(truth.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (k, v) in w.iter_mut().enumerate() {
        let x = k as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable Gaussian filter over valid window positions.
fn filter_valid(values: &[f64], nx: usize, ny: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ox, oy) = (nx - SSIM_WINDOW + 1, ny - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ox * ny];
    for j in 0..ny {
        let row = &values[j * nx..(j + 1) * nx];
        for i in 0..ox {
            rows[j * ox + i] = w.iter().zip(&row[i..i + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ox * oy];
    for j in 0..oy {
        for i in 0..ox {
            out[j * ox + i] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(j + k) * ox + i]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5)
/// over the positions where the window fits inside the grid.
pub fn ssim(reconstruction: &RealField, truth: &RealField, data_range: f64) -> Result<f64> {
    same_grid(reconstruction, truth)?;
    let g = truth.grid();
    if g.nx < SSIM_WINDOW || g.ny < SSIM_WINDOW {
        return Err(Error::GridTooSmall(SSIM_WINDOW));
    }
    let w = gaussian_window();
    // moments are taken about a common offset to avoid cancellation
    let shift = truth.values().iter().sum::<f64>() / truth.values().len() as f64;
    let a: Vec<f64> = reconstruction.values().iter().map(|v| v - shift).collect();
    let b: Vec<f64> = truth.values().iter().map(|v| v - shift).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter_valid(&a, g.nx, g.ny, &w);
    let mu_b = filter_valid(&b, g.nx, g.ny, &w);
    let aa = filter_valid(&prod(&a, &a), g.nx, g.ny, &w);
    let bb = filter_valid(&prod(&b, &b), g.nx, g.ny, &w);
    let ab = filter_valid(&prod(&a, &b), g.nx, g.ny, &w);

    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let mut acc = 0.0;
    for k in 0..mu_a.len() {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let var_a = aa[k] - ma * ma;
        let var_b = bb[k] - mb * mb;
        let cov = ab[k] - ma * mb;
        let (la, lb) = (ma + shift, mb + shift);
        acc += ((2.0 * la * lb + c1) * (2.0 * cov + c2)) / ((la * la + lb * lb + c1) * (var_a + var_b + c2));
    }
    Ok(acc / mu_a.len() as f64)
}
