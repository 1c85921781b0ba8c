//! Binary field snapshots and checkpoint sidecars.
//!
//! Snapshot layout, all little-endian: `b"YFLO"`, version `u32`, dimension
//! `u32`, one `u32` size per axis, one `f64` length per axis, then the values
//! as `f64` in row-major order (last axis fastest).
//!
//! Sidecar layout: `b"YFLC"`, version `u32`, then `step: u64`, `t: f64`,
//! `dt_last: f64`, `dissipation_cum: f64`, `rows: u64` (trajectory rows written).

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"YFLO";
pub const SIDECAR_MAGIC: &[u8; 4] = b"YFLC";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_snapshot(field: &ScalarField) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(12 + 12 * grid.dim() + 8 * field.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for &s in grid.sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for &l in grid.lengths() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for &v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Snapshot {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take<const K: usize>(&mut self) -> Result<[u8; K]> {
        let end = self.pos + K;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice has length K"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if &self.take::<4>()? != magic {
            return Err(self.fail(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.fail(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_snapshot(bytes: &[u8], path: &Path) -> Result<ScalarField> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(SNAPSHOT_MAGIC)?;
    let n = r.u32()? as usize;
    if n == 0 || n > 16 {
        return Err(r.fail(format!("implausible dimension {n}")));
    }
    let sizes = (0..n).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
    let lengths = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let grid = GridSpec::new(sizes, lengths).map_err(|e| r.fail(e.to_string()))?;
    let expected = grid.len() * 8;
    if bytes.len() - r.pos != expected {
        return Err(r.fail(format!(
            "expected {expected} value bytes, found {}",
            bytes.len() - r.pos
        )));
    }
    let values = (0..grid.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ScalarField::new(Arc::new(grid), values).map_err(|e| r.fail(e.to_string()))
}

/// Writes through a temporary file and renames, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_snapshot(path: &Path, field: &ScalarField) -> Result<()> {
    Ok(write_atomic(path, &encode_snapshot(field))?)
}

pub fn read_snapshot(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path).map_err(|e| Error::Snapshot {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_snapshot(&bytes, path)
}

/// Scalar state stored beside a checkpointed field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sidecar {
    pub step: u64,
    pub t: f64,
    pub dt_last: f64,
    pub dissipation_cum: f64,
    pub rows: u64,
}

impl Sidecar {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48);
        out.extend_from_slice(SIDECAR_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&self.dt_last.to_le_bytes());
        out.extend_from_slice(&self.dissipation_cum.to_le_bytes());
        out.extend_from_slice(&self.rows.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        r.header(SIDECAR_MAGIC)?;
        let side = Self {
            step: r.u64()?,
            t: r.f64()?,
            dt_last: r.f64()?,
            dissipation_cum: r.f64()?,
            rows: r.u64()?,
        };
        r.finish()?;
        Ok(side)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, &self.encode())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Snapshot {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> ScalarField {
        let g = Arc::new(GridSpec::new(vec![4, 5, 6], vec![1.0, 2.5, 0.1]).unwrap());
        ScalarField::from_fn(g, |x| 1.0 + x[0] * 0.3 - x[1] * x[2] + 1e-300).unwrap()
    }

    #[test]
    fn byte_layout() {
        let g = Arc::new(GridSpec::new(vec![4, 4, 5], vec![1.0, 2.0, 0.5]).unwrap());
        let mut values = vec![0.0; g.len()];
        values[1] = -2.5;
        let f = ScalarField::new(g, values).unwrap();
        let b = encode_snapshot(&f);
        assert_eq!(&b[0..4], b"YFLO");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[3, 0, 0, 0]);
        assert_eq!(&b[12..24], &[4, 0, 0, 0, 4, 0, 0, 0, 5, 0, 0, 0]);
        assert_eq!(&b[24..32], &1.0f64.to_le_bytes());
        assert_eq!(&b[40..48], &0.5f64.to_le_bytes());
        assert_eq!(&b[56..64], &(-2.5f64).to_le_bytes());
        assert_eq!(b.len(), 48 + 8 * 80);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.yflo");
        let f = field();
        write_snapshot(&path, &f).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(**back.grid(), **f.grid());
        assert!(back
            .values()
            .iter()
            .zip(f.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(fs::read(&path).unwrap(), encode_snapshot(&back));
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        let p = Path::new("x.yflo");
        let good = encode_snapshot(&field());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'Z';
        assert!(decode_snapshot(&bad_magic, p).is_err());
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(decode_snapshot(&bad_version, p).is_err());
        assert!(decode_snapshot(&good[..good.len() - 3], p).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode_snapshot(&long, p).is_err());
        let mut nan = good;
        let k = nan.len() - 8;
        nan[k..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_snapshot(&nan, p).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let s = Sidecar {
            step: 123,
            t: 0.1 + 0.2,
            dt_last: 1e-3,
            dissipation_cum: 7.25,
            rows: 9,
        };
        let b = s.encode();
        assert_eq!(&b[0..4], b"YFLC");
        assert_eq!(b.len(), 48);
        assert_eq!(Sidecar::decode(&b, Path::new("c")).unwrap(), s);
        assert!(Sidecar::decode(&b[..40], Path::new("c")).is_err());
    }
}
