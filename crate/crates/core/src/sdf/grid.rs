//! Grid-sampled signed distance fields with trilinear interpolation.
//!
//! Grids stand in for learned implicit fields: any SDF can be baked onto a
//! lattice and evaluated through the same [`crate::sdf::SdfNode`] interface.
//! Outside the lattice the field is extended by clamping the query to the
//! lattice box and adding the Euclidean distance to it, so distant queries
//! keep feeling outward gradients.

use std::io::{self, Read, Write};

use glam::DVec3;
use serde::{Deserialize, Serialize};

const GSDF_MAGIC: &[u8; 4] = b"GSDF";
const GSDF_VERSION: u32 = 1;

/// A uniform lattice of signed distance samples.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridSdf {
    pub origin: DVec3,
    pub spacing: f64,
    pub dims: [u32; 3],
    /// Sample values in x-fastest order: `values[x + nx*(y + ny*z)]`.
    pub values: Vec<f64>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum GridError {
    BadDims([u32; 3]),
    BadSpacing,
    NonFiniteValue,
    WrongValueCount { expected: usize, got: usize },
}

impl std::fmt::Display for GridError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridError::BadDims(d) => write!(f, "grid dims must be >= 2 per axis, got {d:?}"),
            GridError::BadSpacing => write!(f, "grid spacing must be positive and finite"),
            GridError::NonFiniteValue => write!(f, "grid contains a non-finite value"),
            GridError::WrongValueCount { expected, got } => {
                write!(f, "grid value count {got} does not match dims product {expected}")
            }
        }
    }
}

impl std::error::Error for GridError {}

impl GridSdf {
    pub fn new(
        origin: DVec3,
        spacing: f64,
        dims: [u32; 3],
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        let grid = GridSdf {
            origin,
            spacing,
            dims,
            values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(GridError::BadDims(self.dims));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(GridError::BadSpacing);
        }
        let expected = self.dims.iter().map(|&d| d as usize).product::<usize>();
        if self.values.len() != expected {
            return Err(GridError::WrongValueCount {
                expected,
                got: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue);
        }
        Ok(())
    }

    #[inline]
    fn value_at(&self, x: usize, y: usize, z: usize) -> f64 {
        let nx = self.dims[0] as usize;
        let ny = self.dims[1] as usize;
        self.values[x + nx * (y + ny * z)]
    }

    /// Corner of the lattice box opposite to `origin`.
    pub fn max_corner(&self) -> DVec3 {
        self.origin
            + DVec3::new(
                (self.dims[0] - 1) as f64,
                (self.dims[1] - 1) as f64,
                (self.dims[2] - 1) as f64,
            ) * self.spacing
    }

    /// Trilinear interpolation, extended outside the lattice box by the
    /// clamped boundary value plus the distance to the box.
    pub fn eval(&self, p: DVec3) -> f64 {
        let max = self.max_corner();
        let clamped = p.clamp(self.origin, max);
        let exterior = (p - clamped).length();

        let local = (clamped - self.origin) / self.spacing;
        let idx = |v: f64, n: u32| -> (usize, f64) {
            let i = (v.floor() as usize).min(n as usize - 2);
            (i, v - i as f64)
        };
        let (ix, fx) = idx(local.x, self.dims[0]);
        let (iy, fy) = idx(local.y, self.dims[1]);
        let (iz, fz) = idx(local.z, self.dims[2]);

        let c000 = self.value_at(ix, iy, iz);
        let c100 = self.value_at(ix + 1, iy, iz);
        let c010 = self.value_at(ix, iy + 1, iz);
        let c110 = self.value_at(ix + 1, iy + 1, iz);
        let c001 = self.value_at(ix, iy, iz + 1);
        let c101 = self.value_at(ix + 1, iy, iz + 1);
        let c011 = self.value_at(ix, iy + 1, iz + 1);
        let c111 = self.value_at(ix + 1, iy + 1, iz + 1);

        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let interior = c0 + (c1 - c0) * fz;

        interior + exterior
    }

    /// Writes the binary blob format: magic "GSDF", version u32, dims 3xu32,
    /// origin 3xf64, spacing f64, then values as little-endian f32 in
    /// x-fastest order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(GSDF_MAGIC)?;
        w.write_all(&GSDF_VERSION.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        for c in [self.origin.x, self.origin.y, self.origin.z] {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&self.spacing.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != GSDF_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad GSDF magic"));
        }
        let version = read_u32(r)?;
        if version != GSDF_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported GSDF version {version}"),
            ));
        }
        let dims = [read_u32(r)?, read_u32(r)?, read_u32(r)?];
        let origin = DVec3::new(read_f64(r)?, read_f64(r)?, read_f64(r)?);
        let spacing = read_f64(r)?;
        let count = dims.iter().map(|&d| d as usize).product::<usize>();
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        GridSdf::new(origin, spacing, dims, values)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
