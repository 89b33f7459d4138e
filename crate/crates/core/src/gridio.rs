//! `PHCGRID1` binary grid files.
//!
//! Layout (all little-endian):
//!
//! | offset | type      | field                                  |
//! |--------|-----------|----------------------------------------|
//! | 0      | `[u8; 8]` | magic `PHCGRID1`                       |
//! | 8      | `u64`     | dimensionality (2 or 3)                |
//! | 16     | `u64 x 3` | shape `nx, ny, nz` (`nz = 1` in 2D)    |
//! | 40     | `u64`     | resolution, cells per lattice constant |
//! | 48     | `f64 x 2` | physical extent along x and y          |
//! | 64     | `f64 ...` | values, row-major with z fastest       |
//!
//! The z extent is `nz / resolution` in 3D; it has no header slot.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::geometry::{DielectricGrid, GridSpec};

pub const MAGIC: &[u8; 8] = b"PHCGRID1";
pub const HEADER_LEN: usize = 64;

/// A scalar field on a uniform grid, as stored in a `PHCGRID1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub dimensionality: usize,
    pub shape: [usize; 3],
    pub resolution: usize,
    pub extent: [f64; 2],
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn from_dielectric(grid: &DielectricGrid) -> Self {
        let e = grid.spec.extent();
        ScalarGrid {
            dimensionality: grid.dimensionality(),
            shape: grid.shape(),
            resolution: grid.resolution(),
            extent: [e[0], e[1]],
            values: grid.permittivity.clone(),
        }
    }

    pub fn into_dielectric(self) -> Result<DielectricGrid> {
        let spec = GridSpec {
            resolution: self.resolution,
            shape: self.shape,
            dimensionality: self.dimensionality,
        };
        Ok(DielectricGrid {
            spec,
            permittivity: self.values,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dimensionality as u64).to_le_bytes())?;
        for n in self.shape {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&(self.resolution as u64).to_le_bytes())?;
        for e in self.extent {
            w.write_all(&e.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|e| invalid(format!("truncated PHCGRID1 header: {e}")))?;
        if &header[..8] != MAGIC {
            return Err(invalid("not a PHCGRID1 file (bad magic)"));
        }
        let word = |i: usize| u64::from_le_bytes(header[8 * i..8 * i + 8].try_into().unwrap());
        let float = |i: usize| f64::from_le_bytes(header[8 * i..8 * i + 8].try_into().unwrap());
        let dimensionality = word(1) as usize;
        let shape = [word(2) as usize, word(3) as usize, word(4) as usize];
        let resolution = word(5) as usize;
        let extent = [float(6), float(7)];
        if dimensionality != 2 && dimensionality != 3 {
            return Err(invalid(format!("PHCGRID1 dimensionality {dimensionality}")));
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| invalid("PHCGRID1 shape overflows"))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| invalid(format!("reading PHCGRID1 payload: {e}")))?;
        if bytes.len() != count * 8 {
            return Err(invalid(format!(
                "PHCGRID1 payload has {} bytes, shape needs {}",
                bytes.len(),
                count * 8
            )));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(ScalarGrid {
            dimensionality,
            shape,
            resolution,
            extent,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_bytes() {
        let g = ScalarGrid {
            dimensionality: 2,
            shape: [2, 3, 1],
            resolution: 16,
            extent: [0.125, 0.1875],
            values: (0..6).map(|v| v as f64 * 0.5).collect(),
        };
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 64 + 6 * 8);
        assert_eq!(&buf[..8], b"PHCGRID1");
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[40..48].try_into().unwrap()), 16);
        assert_eq!(f64::from_le_bytes(buf[64 + 8..64 + 16].try_into().unwrap()), 0.5);
        assert_eq!(ScalarGrid::read_from(&buf[..]).unwrap(), g);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = vec![0u8; 64];
        assert!(ScalarGrid::read_from(&buf[..]).is_err());
        buf[..8].copy_from_slice(MAGIC);
        buf[8] = 2;
        buf[16] = 1;
        buf[24] = 1;
        buf[32] = 1;
        assert!(ScalarGrid::read_from(&buf[..]).is_err());
        buf.extend_from_slice(&1.5f64.to_le_bytes());
        assert_eq!(ScalarGrid::read_from(&buf[..]).unwrap().values, vec![1.5]);
    }
}
