//! Minimal binary array container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "USCT"
//! version  u16      1
//! dtype    u8       0 = real64, 1 = complex128
//! rank     u8
//! dims     rank x u64
//! payload  row-major values; complex stored as (re, im) f64 pairs
//! ```
//!
//! A rank-2 field is stored with dims `[ny, nx]`.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Field, Grid2D, RealField};

pub const MAGIC: [u8; 4] = *b"USCT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl ArrayData {
    fn dtype(&self) -> u8 {
        match self {
            ArrayData::Real(_) => 0,
            ArrayData::Complex(_) => 1,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::Real(v) => v.len(),
            ArrayData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl Array {
    pub fn new(dims: Vec<usize>, data: ArrayData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::InvalidDimension(format!("rank {} too large", dims.len())));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::InvalidDimension(format!(
                "dims {dims:?} describe {count} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn header_len(rank: usize) -> usize {
        4 + 2 + 1 + 1 + 8 * rank
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let elem = match self.data {
            ArrayData::Real(_) => 8,
            ArrayData::Complex(_) => 16,
        };
        let mut out = Vec::with_capacity(Self::header_len(self.dims.len()) + elem * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.data.dtype());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            ArrayData::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = cur.take(1, "dtype")?[0];
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(cur.take(8, "dims")?.try_into().unwrap());
            dims.push(usize::try_from(d).map_err(|_| Error::InvalidDimension(format!("dim {d}")))?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidDimension(format!("dims {dims:?} overflow")))?;
        let data = match dtype {
            0 => {
                let raw = cur.take(count.saturating_mul(8), "payload")?;
                ArrayData::Real(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            1 => {
                let raw = cur.take(count.saturating_mul(16), "payload")?;
                ArrayData::Complex(
                    raw.chunks_exact(16)
                        .map(|c| {
                            Complex64::new(
                                f64::from_le_bytes(c[..8].try_into().unwrap()),
                                f64::from_le_bytes(c[8..].try_into().unwrap()),
                            )
                        })
                        .collect(),
                )
            }
            other => return Err(Error::InvalidDimension(format!("unknown dtype code {other}"))),
        };
        if cur.pos != bytes.len() {
            return Err(Error::InvalidDimension(format!(
                "{} trailing bytes after payload",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }
}

impl From<&RealField> for Array {
    fn from(f: &RealField) -> Self {
        Array { dims: vec![f.grid().ny, f.grid().nx], data: ArrayData::Real(f.values().to_vec()) }
    }
}

impl From<&ComplexField> for Array {
    fn from(f: &ComplexField) -> Self {
        Array { dims: vec![f.grid().ny, f.grid().nx], data: ArrayData::Complex(f.values().to_vec()) }
    }
}

impl Array {
    fn check_field_dims(&self, grid: &Grid2D) -> Result<()> {
        if self.dims != [grid.ny, grid.nx] {
            return Err(Error::DimensionMismatch(format!(
                "container dims {:?} do not match grid [{}, {}]",
                self.dims, grid.ny, grid.nx
            )));
        }
        Ok(())
    }

    /// Interpret a rank-2 real array as a field on `grid`.
    pub fn into_real_field(self, grid: Grid2D) -> Result<RealField> {
        self.check_field_dims(&grid)?;
        match self.data {
            ArrayData::Real(v) => Field::from_values(grid, v),
            ArrayData::Complex(_) => Err(Error::DimensionMismatch("expected real64 payload".into())),
        }
    }

    pub fn into_complex_field(self, grid: Grid2D) -> Result<ComplexField> {
        self.check_field_dims(&grid)?;
        match self.data {
            ArrayData::Complex(v) => Field::from_values(grid, v),
            ArrayData::Real(v) => Field::from_values(grid, v.into_iter().map(|x| Complex64::new(x, 0.0)).collect()),
        }
    }
}

pub fn write_real_field(path: impl AsRef<Path>, field: &RealField) -> Result<()> {
    Array::from(field).write(path)
}

pub fn write_complex_field(path: impl AsRef<Path>, field: &ComplexField) -> Result<()> {
    Array::from(field).write(path)
}
