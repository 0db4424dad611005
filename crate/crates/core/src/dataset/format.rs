//! Binary feature file format.
//!
//! Little-endian layout: magic `MMFB`, `u32` version, `u8` kind
//! (0 = matrix, 1 = sequence set), `u64` n, `u64` d, then either `n·d`
//! row-major `f32` values or, per sample, a `u32` frame count `t` followed by
//! `t·d` values.

use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::matrix::Matrix;

use super::{FeatureMatrix, SequenceFeature};

pub const MAGIC: [u8; 4] = *b"MMFB";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFile {
    Matrix(Matrix),
    Sequences { dim: usize, samples: Vec<SequenceFeature> },
}

impl FeatureFile {
    pub fn n(&self) -> usize {
        match self {
            FeatureFile::Matrix(m) => m.rows(),
            FeatureFile::Sequences { samples, .. } => samples.len(),
        }
    }
}

pub fn encode_feature_file(file: &FeatureFile) -> Vec<u8> {
    let (kind, n, d) = match file {
        FeatureFile::Matrix(m) => (0u8, m.rows(), m.cols()),
        FeatureFile::Sequences { dim, samples } => (1u8, samples.len(), *dim),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * d);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    match file {
        FeatureFile::Matrix(m) => put_f32s(&mut out, m.as_slice()),
        FeatureFile::Sequences { samples, .. } => {
            for s in samples {
                out.extend_from_slice(&(s.frames.rows() as u32).to_le_bytes());
                put_f32s(&mut out, s.frames.as_slice());
            }
        }
    }
    out
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corruption(format!(
                "unexpected end of data at byte {} (needed {len} more)",
                self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::Corruption("size overflow".into()))?)?;
        let mut values = Vec::with_capacity(count);
        for chunk in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            ensure!(v.is_finite(), Validation, "non-finite value {v} at value index {}", values.len());
            values.push(v as f64);
        }
        Ok(values)
    }
}

pub fn decode_feature_file(bytes: &[u8]) -> Result<FeatureFile> {
    ensure!(bytes.len() >= 4 && bytes[..4] == MAGIC, Format, "bad magic bytes");
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    ensure!(version == FORMAT_VERSION, Format, "unsupported version {version}");
    let kind = r.take(1)?[0];
    let n = usize::try_from(r.u64()?).map_err(|_| Error::Corruption("n overflows usize".into()))?;
    let d = usize::try_from(r.u64()?).map_err(|_| Error::Corruption("d overflows usize".into()))?;
    let file = match kind {
        0 => {
            let count = n.checked_mul(d).ok_or_else(|| Error::Corruption("n·d overflows".into()))?;
            ensure!(
                bytes.len() - r.pos == count * 4,
                Corruption,
                "header declares {n}x{d} ({} bytes of values) but {} bytes follow",
                count * 4,
                bytes.len() - r.pos
            );
            FeatureFile::Matrix(Matrix::from_vec(n, d, r.f32s(count)?)?)
        }
        1 => {
            let mut samples = Vec::with_capacity(n.min(1 << 20));
            for i in 0..n {
                let t = r.u32()? as usize;
                ensure!(t >= 1, Validation, "sample {i} has an empty frame sequence");
                let values = r.f32s(t.checked_mul(d).ok_or_else(|| Error::Corruption("t·d overflows".into()))?)?;
                samples.push(SequenceFeature {
                    frames: Matrix::from_vec(t, d, values)?,
                });
            }
            ensure!(r.pos == bytes.len(), Corruption, "{} trailing bytes after last sequence", bytes.len() - r.pos);
            FeatureFile::Sequences { dim: d, samples }
        }
        other => return Err(Error::Format(format!("unknown kind byte {other}"))),
    };
    Ok(file)
}

pub fn load_feature_file(path: &Path) -> Result<FeatureFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_file(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a matrix-kind file; the modality is named after the file stem.
pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match load_feature_file(path)? {
        FeatureFile::Matrix(values) => Ok(FeatureMatrix { modality: name, values }),
        FeatureFile::Sequences { .. } => Err(Error::Format(format!(
            "{} holds sequences, expected a matrix",
            path.display()
        ))),
    }
}

pub fn write_feature_file(path: &Path, file: &FeatureFile) -> Result<()> {
    crate::util::write_atomic(path, &encode_feature_file(file))
}

pub fn write_feature_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
    write_feature_file(path, &FeatureFile::Matrix(m.values.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(kind: u8, n: u64, d: u64) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(kind);
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&d.to_le_bytes());
        b
    }

    fn with_values(mut b: Vec<u8>, values: &[f32]) -> Vec<u8> {
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_two_by_three() {
        let b = with_values(header(0, 2, 3), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let FeatureFile::Matrix(m) = decode_feature_file(&b).unwrap() else {
            panic!("expected matrix");
        };
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn short_payload_is_corruption() {
        let b = with_values(header(0, 2, 3), &[1.0; 5]);
        assert!(matches!(decode_feature_file(&b), Err(Error::Corruption(_))));
        let b = with_values(header(0, 2, 3), &[1.0; 7]);
        assert!(matches!(decode_feature_file(&b), Err(Error::Corruption(_))));
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let mut b = with_values(header(0, 1, 1), &[1.0]);
        b[0] = b'X';
        assert!(matches!(decode_feature_file(&b), Err(Error::Format(_))));
        let mut b = with_values(header(0, 1, 1), &[1.0]);
        b[4] = 2;
        assert!(matches!(decode_feature_file(&b), Err(Error::Format(_))));
        let b = with_values(header(7, 1, 1), &[1.0]);
        assert!(matches!(decode_feature_file(&b), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        for bad in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
            let b = with_values(header(0, 1, 2), &[0.0, bad]);
            assert!(matches!(decode_feature_file(&b), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn sequence_set_round_trips() {
        let samples = vec![
            SequenceFeature { frames: Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap() },
            SequenceFeature { frames: Matrix::from_rows(&[vec![0.5, -1.0], vec![3.0, 4.0], vec![0.0, 0.25]]).unwrap() },
        ];
        let file = FeatureFile::Sequences { dim: 2, samples };
        let bytes = encode_feature_file(&file);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 4 + 8 * 4);
        assert_eq!(decode_feature_file(&bytes).unwrap(), file);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let mut b = header(1, 1, 2);
        b.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_feature_file(&b), Err(Error::Validation(_))));
    }
}
