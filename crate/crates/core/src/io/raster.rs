//! `RDF1` rasters: 4-byte magic, kind byte, little-endian `u32` width and
//! height, then `width·height` little-endian `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Grid2;
use crate::renderer::SarImage;
use crate::scalar::Real;
use crate::scene::{DsmSurface, SpecularityMap};

pub const MAGIC: &[u8; 4] = b"RDF1";
const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterKind {
    Dsm,
    Theta,
    Sar,
}

impl RasterKind {
    pub fn byte(self) -> u8 {
        match self {
            RasterKind::Dsm => 0,
            RasterKind::Theta => 1,
            RasterKind::Sar => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(RasterKind::Dsm),
            1 => Ok(RasterKind::Theta),
            2 => Ok(RasterKind::Sar),
            other => Err(Error::UnknownRasterKind(other)),
        }
    }
}

/// In-memory raster. For SAR images rows are azimuth planes and columns are
/// range bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub kind: RasterKind,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(kind: RasterKind, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(width * height, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSurface(format!("non-finite raster value at index {i}")));
        }
        Ok(Self { kind, width, height, data })
    }

    fn from_values<T: Real>(kind: RasterKind, width: usize, height: usize, values: &[T]) -> Result<Self> {
        let data = values.iter().map(|v| v.to_f64_lossless() as f32).collect();
        Self::new(kind, width, height, data)
    }

    pub fn from_surface<T: Real>(s: &DsmSurface<T>) -> Result<Self> {
        Self::from_values(RasterKind::Dsm, s.width(), s.height_cells(), s.heights().as_slice())
    }

    /// θ values (not raw parameters).
    pub fn from_specularity<T: Real>(s: &SpecularityMap<T>) -> Result<Self> {
        Self::from_values(RasterKind::Theta, s.width(), s.height(), s.theta_grid().as_slice())
    }

    pub fn from_image<T: Real>(img: &SarImage<T>) -> Result<Self> {
        Self::from_values(RasterKind::Sar, img.n_range_bins(), img.n_planes(), img.data())
    }

    fn expect_kind(&self, kind: RasterKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::shape(format!("{kind:?} raster"), format!("{:?} raster", self.kind)));
        }
        Ok(())
    }

    fn values<T: Real>(&self) -> Vec<T> {
        self.data.iter().map(|&v| T::lit(f64::from(v))).collect()
    }

    pub fn to_surface<T: Real>(&self) -> Result<DsmSurface<T>> {
        self.expect_kind(RasterKind::Dsm)?;
        DsmSurface::new(self.width, self.height, self.values())
    }

    pub fn to_specularity<T: Real>(&self) -> Result<SpecularityMap<T>> {
        self.expect_kind(RasterKind::Theta)?;
        let grid = Grid2::from_vec(self.width, self.height, self.values()).expect("length checked on construction");
        SpecularityMap::from_theta(&grid)
    }

    pub fn to_image<T: Real>(&self, view_id: usize, noisy: bool) -> Result<SarImage<T>> {
        self.expect_kind(RasterKind::Sar)?;
        SarImage::new(self.height, self.width, self.values(), view_id, noisy)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.kind.byte());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses raster bytes; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            // a short file that starts like a raster is reported as truncated
            if bytes.len() < 4 && MAGIC.starts_with(bytes) {
                return Err(truncated(path, HEADER_LEN, bytes.len()));
            }
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: bytes[..bytes.len().min(4)].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(path, HEADER_LEN, bytes.len()));
        }
        let kind = RasterKind::from_byte(bytes[4])?;
        let width = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let height = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| truncated(path, usize::MAX, bytes.len()))?;
        if bytes.len() != expected {
            return Err(truncated(path, expected, bytes.len()));
        }
        let mut data = Vec::with_capacity(width * height);
        for (index, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.to_path_buf(),
                    index,
                });
            }
            data.push(v);
        }
        Ok(Self { kind, width, height, data })
    }
}

fn truncated(path: &Path, expected: usize, found: usize) -> Error {
    Error::TruncatedFile {
        path: path.to_path_buf(),
        expected,
        found,
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Raster::from_bytes(&bytes, path)
}

/// Writes through a temporary sibling file and renames it into place, so a
/// reader never sees a partial raster.
pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &raster.to_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Whitespace-separated text grid, one raster row per line.
pub fn export_text_grid(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for row in raster.data.chunks(raster.width.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let r = Raster::new(RasterKind::Sar, 3, 2, vec![0.0, -1.5, 3.25e-20, f32::MAX, f32::MIN_POSITIVE, 7.0]).unwrap();
        let back = Raster::from_bytes(&r.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn header_layout() {
        let r = Raster::new(RasterKind::Theta, 2, 1, vec![1.0, 2.0]).unwrap();
        let b = r.to_bytes();
        assert_eq!(&b[..4], b"RDF1");
        assert_eq!(b[4], 1);
        assert_eq!(&b[5..9], &[2, 0, 0, 0]);
        assert_eq!(&b[9..13], &[1, 0, 0, 0]);
        assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 21);
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("mem");
        assert!(matches!(Raster::from_bytes(b"RDF1\x00", p), Err(Error::TruncatedFile { .. })));
        assert!(matches!(Raster::from_bytes(b"RDF", p), Err(Error::TruncatedFile { .. })));
        assert!(matches!(Raster::from_bytes(b"GIF89a", p), Err(Error::BadMagic { .. })));
        let mut b = Raster::new(RasterKind::Dsm, 2, 2, vec![0.0; 4]).unwrap().to_bytes();
        assert!(matches!(Raster::from_bytes(&b[..b.len() - 1], p), Err(Error::TruncatedFile { .. })));
        b[4] = 9;
        assert!(matches!(Raster::from_bytes(&b, p), Err(Error::UnknownRasterKind(9))));
        b[4] = 0;
        b[13 + 8..13 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(Raster::from_bytes(&b, p), Err(Error::NonFiniteValue { index: 2, .. })));
    }

    #[test]
    fn kind_checked_on_conversion() {
        let r = Raster::new(RasterKind::Sar, 2, 2, vec![0.5; 4]).unwrap();
        assert!(r.to_surface::<f64>().is_err());
        let s = Raster::new(RasterKind::Dsm, 2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(s.to_surface::<f64>().unwrap().height_at(0.5, 0.5), 0.5);
    }
}
