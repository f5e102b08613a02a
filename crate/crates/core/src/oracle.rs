//! Brute-force references for verification.
//!
//! Nothing here shares numerical kernels with the solver, the adjoint
//! gradient or the metrics it checks: the dense operator is assembled from
//! explicit cosine sums, the Hankel function is evaluated from its series
//! and asymptotic expansions, the finite-difference gradient only calls the
//! public objective, and SSIM is a direct windowed double loop. Every
//! routine is guarded to desk-scale sizes.

use std::f64::consts::{FRAC_PI_4, PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::adjoint::{objective, simulate};
use crate::cbs::SolverConfig;
use crate::error::{Error, Result};
use crate::geometry::{MeasurementMatrix, TransducerArray};
use crate::grid::{ComplexField, Grid2D, RealField, SoundSpeedField};

/// Largest grid side the dense oracle accepts.
pub const DENSE_LIMIT: usize = 32;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Argument at which [`hankel1_0`] switches from the power series to the
/// asymptotic expansion. Beyond 8 the asymptotic series' smallest term is
/// still ~1e-7, so the switch sits where it drops below 1e-10.
pub const HANKEL_SWITCH: f64 = 12.0;

/// `H₀⁽¹⁾(z) = J₀(z) + i Y₀(z)` for real `z > 0`.
pub fn hankel1_0(z: f64) -> Complex64 {
    assert!(z > 0.0, "hankel1_0 needs a positive argument");
    if z < HANKEL_SWITCH {
        hankel_series(z)
    } else {
        hankel_asymptotic(z)
    }
}

fn hankel_series(z: f64) -> Complex64 {
    let q = 0.25 * z * z;
    let mut term = 1.0; // (−q)^k / (k!)²
    let mut j0 = 1.0;
    let mut harmonic = 0.0;
    let mut y_sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        harmonic += 1.0 / kf;
        j0 += term;
        y_sum -= harmonic * term;
        if term.abs() < 1e-18 * j0.abs().max(1e-300) && term.abs() * harmonic < 1e-18 {
            break;
        }
    }
    let y0 = 2.0 / PI * (((0.5 * z).ln() + EULER_GAMMA) * j0 + y_sum);
    Complex64::new(j0, y0)
}

fn hankel_asymptotic(z: f64) -> Complex64 {
    // Σ i^k a_k / z^k with a_k = Π (−(2j−1)²) / (k! 8^k), truncated at the smallest term
    let mut sum = Complex64::new(1.0, 0.0);
    let mut a = 1.0;
    let mut ik = Complex64::new(1.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        a *= -(odd * odd) / (kf * 8.0 * z);
        if a.abs() >= last {
            break;
        }
        last = a.abs();
        ik *= Complex64::new(0.0, 1.0);
        sum += ik * a;
    }
    Complex64::from_polar((2.0 / (PI * z)).sqrt(), z - FRAC_PI_4) * sum
}

/// Outgoing free-space Green's function `(i/4) H₀⁽¹⁾(k0 |r − r′|)` of
/// `(∇² + k0²) G = −δ`.
pub fn analytic_green2d(k0: f64, source: (f64, f64), points: &[(f64, f64)]) -> Result<Vec<Complex64>> {
    points
        .iter()
        .map(|p| {
            let d = (p.0 - source.0).hypot(p.1 - source.1);
            if d == 0.0 {
                return Err(Error::CoincidentPoint);
            }
            Ok(Complex64::new(0.0, 0.25) * hankel1_0(k0 * d))
        })
        .collect()
}

/// 1D periodic spectral second-derivative matrix, built from explicit
/// cosine sums: `D[a][b] = (1/n) Σ_q −p_q² cos(p_q (a−b) h)`.
pub fn spectral_second_derivative(n: usize, h: f64) -> Vec<f64> {
    let len = n as f64 * h;
    let p: Vec<f64> = (0..n)
        .map(|q| {
            let s = if q <= n / 2 { q as f64 } else { q as f64 - n as f64 };
            TAU * s / len
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let dist = (a as f64 - b as f64) * h;
            d[a * n + b] = p.iter().map(|&pq| -pq * pq * (pq * dist).cos()).sum::<f64>() / n as f64;
        }
    }
    d
}

/// Dense matrix of `−∇²_spectral − k²` on a periodic grid.
pub struct DenseOperator {
    pub grid: Grid2D,
    pub matrix: DMatrix<Complex64>,
}

impl DenseOperator {
    pub fn new(grid: Grid2D, k_sq: &[Complex64]) -> Result<Self> {
        if grid.nx > DENSE_LIMIT || grid.ny > DENSE_LIMIT {
            return Err(Error::GridTooLarge { nx: grid.nx, ny: grid.ny, limit: DENSE_LIMIT });
        }
        if k_sq.len() != grid.len() {
            return Err(Error::DimensionMismatch("k² must cover the grid".into()));
        }
        let dx = spectral_second_derivative(grid.nx, grid.h);
        let dy = spectral_second_derivative(grid.ny, grid.h);
        let n = grid.len();
        let (nx, ny) = (grid.nx, grid.ny);
        let matrix = DMatrix::from_fn(n, n, |row, col| {
            let (i, j) = (row % nx, row / nx);
            let (a, b) = (col % nx, col / nx);
            let mut lap = 0.0;
            if j == b {
                lap += dx[i * nx + a];
            }
            if i == a {
                lap += dy[j * ny + b];
            }
            let mut v = Complex64::new(-lap, 0.0);
            if row == col {
                v -= k_sq[row];
            }
            v
        });
        Ok(Self { grid, matrix })
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let v = nalgebra::DVector::from_column_slice(x);
        (&self.matrix * v).iter().copied().collect()
    }

    pub fn solve(&self, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let b = nalgebra::DVector::from_column_slice(rhs);
        self.matrix
            .clone()
            .lu()
            .solve(&b)
            .map(|x| x.iter().copied().collect())
            .ok_or_else(|| Error::InvalidConfig("dense operator is singular".into()))
    }
}

/// Direct solve of `(∇² + (ω/c)²) Y = −ρ` on the periodic grid of `speed`.
pub fn dense_solve(speed: &SoundSpeedField, source: &ComplexField, omega: f64) -> Result<ComplexField> {
    let k_sq: Vec<Complex64> = speed.values().iter().map(|c| Complex64::new((omega / c).powi(2), 0.0)).collect();
    dense_solve_medium(speed.grid(), &k_sq, source)
}

/// Direct solve for an arbitrary complex `k²` on a periodic grid.
pub fn dense_solve_medium(grid: &Grid2D, k_sq: &[Complex64], source: &ComplexField) -> Result<ComplexField> {
    if source.grid() != grid {
        return Err(Error::DimensionMismatch("source must share the medium grid".into()));
    }
    let op = DenseOperator::new(*grid, k_sq)?;
    ComplexField::from_values(*grid, op.solve(source.values())?)
}

/// Central finite differences of the misfit at selected nodes:
/// `(T(c + δ e_j) − T(c − δ e_j)) / (2 δ h²)`.
///
/// Dividing by the cell area `h²` turns the per-node derivative into a
/// density, which is the normalization of the adjoint gradient.
pub fn fd_gradient(
    speed: &SoundSpeedField,
    observed: &MeasurementMatrix,
    array: &TransducerArray,
    nodes: &[usize],
    fd_step: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidConfig(format!("fd_step must be positive, got {fd_step}")));
    }
    let h2 = speed.grid().h.powi(2);
    // perturbed solves start from the unperturbed wavefields
    let (_, base) = simulate(speed, array, cfg, None)?;
    let eval = |delta: f64, node: usize| -> Result<f64> {
        let mut f = speed.field().clone();
        f.values_mut()[node] += delta;
        let s = SoundSpeedField::new(f)?;
        let (pred, _) = simulate(&s, array, cfg, Some(&base.fields[0]))?;
        Ok(objective(&pred, observed)?.value)
    };
    nodes
        .iter()
        .map(|&node| Ok((eval(fd_step, node)? - eval(-fd_step, node)?) / (2.0 * fd_step * h2)))
        .collect()
}

/// Straightforward SSIM: 11×11 Gaussian window (σ = 1.5), valid-region
/// positions only, every local statistic recomputed from scratch.
pub fn ssim_brute(a: &RealField, b: &RealField, data_range: f64) -> Result<f64> {
    const W: usize = 11;
    let g = a.grid();
    if b.grid() != g {
        return Err(Error::DimensionMismatch("SSIM inputs must share a grid".into()));
    }
    if g.nx < W || g.ny < W {
        return Err(Error::GridTooSmall(W));
    }
    let mut w = [[0.0; W]; W];
    let mut total = 0.0;
    for (dy, row) in w.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (x, y) = (dx as f64 - 5.0, dy as f64 - 5.0);
            *v = (-(x * x + y * y) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for j0 in 0..=g.ny - W {
        for i0 in 0..=g.nx - W {
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..W {
                for dx in 0..W {
                    let wt = w[dy][dx] / total;
                    ma += wt * a.at(i0 + dx, j0 + dy);
                    mb += wt * b.at(i0 + dx, j0 + dy);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..W {
                for dx in 0..W {
                    let wt = w[dy][dx] / total;
                    let da = a.at(i0 + dx, j0 + dy) - ma;
                    let db = b.at(i0 + dx, j0 + dy) - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(acc / count as f64)
}
