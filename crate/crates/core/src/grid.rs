//! Uniform 2D grids and scalar fields sampled on them.
//!
//! Every field in the crate is stored row-major with linear index
//! `j * nx + i`, where `i` runs along x and `j` along y. Physical
//! coordinates are continuous; node `(i, j)` sits at
//! `origin + (i * h, j * h)`.

use num_complex::Complex64;
use std::ops::{Add, Mul};

use crate::error::{Error, Result};

/// A uniform rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    /// Node spacing in meters.
    pub h: f64,
    /// Physical coordinate of node (0, 0).
    pub origin: (f64, f64),
}

impl Grid2D {
    pub const MIN_NODES: usize = 4;

    pub fn new(nx: usize, ny: usize, h: f64, origin: (f64, f64)) -> Result<Self> {
        if nx < Self::MIN_NODES || ny < Self::MIN_NODES {
            return Err(Error::InvalidDimension(format!(
                "grid needs at least {min}x{min} nodes, got {nx}x{ny}",
                min = Self::MIN_NODES
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidDimension(format!("grid spacing must be positive, got {h}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::InvalidDimension("grid origin must be finite".into()));
        }
        Ok(Self { nx, ny, h, origin })
    }

    /// Grid whose physical center is `center`.
    pub fn centered(nx: usize, ny: usize, h: f64, center: (f64, f64)) -> Result<Self> {
        let origin = (
            center.0 - 0.5 * (nx - 1) as f64 * h,
            center.1 - 0.5 * (ny - 1) as f64 * h,
        );
        Self::new(nx, ny, h, origin)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical size spanned by the nodes, `((nx-1)h, (ny-1)h)`.
    pub fn extent(&self) -> (f64, f64) {
        ((self.nx - 1) as f64 * self.h, (self.ny - 1) as f64 * self.h)
    }

    pub fn center(&self) -> (f64, f64) {
        let (ex, ey) = self.extent();
        (self.origin.0 + 0.5 * ex, self.origin.1 + 0.5 * ey)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.origin.0 + i as f64 * self.h, self.origin.1 + j as f64 * self.h)
    }

    /// Continuous (fractional) node coordinates of a physical point.
    #[inline]
    pub fn to_fractional(&self, p: (f64, f64)) -> (f64, f64) {
        ((p.0 - self.origin.0) / self.h, (p.1 - self.origin.1) / self.h)
    }

    /// Whether `p` lies inside the closed physical extent, allowing a
    /// relative slack of 1e-12 of the spacing for round-off.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        let (fx, fy) = self.to_fractional(p);
        let slack = 1e-12;
        fx >= -slack
            && fy >= -slack
            && fx <= (self.nx - 1) as f64 + slack
            && fy <= (self.ny - 1) as f64 + slack
    }

    /// Nearest grid node to `p`, or `None` outside the extent.
    pub fn nearest_node(&self, p: (f64, f64)) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let (fx, fy) = self.to_fractional(p);
        let i = (fx.round().max(0.0) as usize).min(self.nx - 1);
        let j = (fy.round().max(0.0) as usize).min(self.ny - 1);
        Some((i, j))
    }

    /// The four bilinear stencil entries `(linear index, weight)` for `p`.
    /// Weights sum to one; nodes with zero weight are still listed.
    pub fn bilinear_stencil(&self, p: (f64, f64)) -> Result<[(usize, f64); 4]> {
        if !self.contains(p) {
            return Err(Error::OutOfBounds { x: p.0, y: p.1 });
        }
        let (fx, fy) = self.to_fractional(p);
        // positions on a node up to round-off hit that node exactly
        let snap = |f: f64| if (f - f.round()).abs() < 1e-9 { f.round() } else { f };
        let fx = snap(fx).clamp(0.0, (self.nx - 1) as f64);
        let fy = snap(fy).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(self.nx - 2);
        let j0 = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        Ok([
            (self.index(i0, j0), (1.0 - tx) * (1.0 - ty)),
            (self.index(i0 + 1, j0), tx * (1.0 - ty)),
            (self.index(i0, j0 + 1), (1.0 - tx) * ty),
            (self.index(i0 + 1, j0 + 1), tx * ty),
        ])
    }

    /// Same spacing, `pad` extra nodes on every side.
    pub fn padded(&self, pad: usize) -> Grid2D {
        Grid2D {
            nx: self.nx + 2 * pad,
            ny: self.ny + 2 * pad,
            h: self.h,
            origin: (self.origin.0 - pad as f64 * self.h, self.origin.1 - pad as f64 * self.h),
        }
    }
}

/// Values attached to every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: Grid2D,
    values: Vec<T>,
}

pub type RealField = Field<f64>;
pub type ComplexField = Field<Complex64>;

impl<T: Copy> Field<T> {
    pub fn from_values(grid: Grid2D, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDimension(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, value: T) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut((f64, f64)) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.node(i, j)));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[self.grid.index(i, j)]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Grow by `pad` nodes on each side, filling the border with `fill`.
    pub fn pad(&self, pad: usize, fill: T) -> Field<T> {
        let grid = self.grid.padded(pad);
        let mut values = vec![fill; grid.len()];
        for j in 0..self.grid.ny {
            let src = &self.values[j * self.grid.nx..(j + 1) * self.grid.nx];
            let start = grid.index(pad, j + pad);
            values[start..start + self.grid.nx].copy_from_slice(src);
        }
        Field { grid, values }
    }

    /// Inverse of [`Field::pad`]: drop `pad` nodes from each side.
    pub fn crop(&self, pad: usize) -> Result<Field<T>> {
        let g = &self.grid;
        if g.nx < 2 * pad + Grid2D::MIN_NODES || g.ny < 2 * pad + Grid2D::MIN_NODES {
            return Err(Error::InvalidDimension(format!(
                "cannot crop {pad} nodes per side from a {}x{} grid",
                g.nx, g.ny
            )));
        }
        let grid = Grid2D {
            nx: g.nx - 2 * pad,
            ny: g.ny - 2 * pad,
            h: g.h,
            origin: (g.origin.0 + pad as f64 * g.h, g.origin.1 + pad as f64 * g.h),
        };
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let start = g.index(pad, j + pad);
            values.extend_from_slice(&self.values[start..start + grid.nx]);
        }
        Ok(Field { grid, values })
    }
}

impl<T> Field<T>
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    /// Bilinear interpolation at a physical point; exact at nodes.
    pub fn sample(&self, p: (f64, f64)) -> Result<T> {
        let st = self.grid.bilinear_stencil(p)?;
        let mut acc = self.values[st[0].0] * st[0].1;
        for &(idx, w) in &st[1..] {
            acc = acc + self.values[idx] * w;
        }
        Ok(acc)
    }

    /// Bilinear resampling onto `dst`, whose extent must lie inside ours.
    pub fn resample(&self, dst: &Grid2D) -> Result<Field<T>> {
        if dst == &self.grid {
            return Ok(self.clone());
        }
        let (ex, ey) = dst.extent();
        let corners = [
            dst.origin,
            (dst.origin.0 + ex, dst.origin.1),
            (dst.origin.0, dst.origin.1 + ey),
            (dst.origin.0 + ex, dst.origin.1 + ey),
        ];
        if corners.iter().any(|&c| !self.grid.contains(c)) {
            return Err(Error::ExtentMismatch);
        }
        let mut values = Vec::with_capacity(dst.len());
        for j in 0..dst.ny {
            for i in 0..dst.nx {
                values.push(self.sample(dst.node(i, j))?);
            }
        }
        Ok(Field { grid: *dst, values })
    }
}

impl ComplexField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, Complex64::new(0.0, 0.0))
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// A strictly positive sound-speed map in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundSpeedField(RealField);

impl SoundSpeedField {
    pub fn new(field: RealField) -> Result<Self> {
        if let Some(bad) = field.values().iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidSpeed(*bad));
        }
        Ok(Self(field))
    }

    pub fn homogeneous(grid: Grid2D, speed: f64) -> Result<Self> {
        Self::new(RealField::constant(grid, speed))
    }

    pub fn grid(&self) -> &Grid2D {
        self.0.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn field(&self) -> &RealField {
        &self.0
    }

    pub fn into_field(self) -> RealField {
        self.0
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn pad(&self, pad: usize, fill: f64) -> Result<Self> {
        Self::new(self.0.pad(pad, fill))
    }
}
