//! Binary dataset files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "OFDS" | u32 version | u64 n_samples
//! u32 rows | u32 cols | u32 channels                      (inputs)
//! u32 target_rows | u32 target_cols | u32 target_channels
//! f64 carrier_freq | f64 subcarrier_spacing
//! [u8; 32] fingerprint of the enhancing model (all zero when none)
//! n_samples x (f32 snr_db | f32 doppler_hz | u64 seed)
//! inputs  f32[n_samples * rows * cols * channels]
//! targets f32[n_samples * target_rows * target_cols * target_channels]
//! ```
//!
//! Each sample is stored channel-last, row-major.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OFDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 6 * 4 + 2 * 8 + 32;
const RECORD_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorDims {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl TensorDims {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Self { rows, cols, channels }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_shape(&self) -> [usize; 3] {
        [self.rows, self.cols, self.channels]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeta {
    pub snr_db: f32,
    pub doppler_hz: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dims: TensorDims,
    pub target_dims: TensorDims,
    pub carrier_freq: f64,
    pub subcarrier_spacing: f64,
    pub fingerprint: [u8; 32],
    pub meta: Vec<SampleMeta>,
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let n = self.input_dims.len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let n = self.target_dims.len();
        &self.targets[i * n..(i + 1) * n]
    }

    pub fn has_fingerprint(&self) -> bool {
        self.fingerprint.iter().any(|&b| b != 0)
    }

    fn check(&self) -> Result<()> {
        if self.inputs.len() != self.len() * self.input_dims.len()
            || self.targets.len() != self.len() * self.target_dims.len()
        {
            return Err(Error::Shape(format!(
                "dataset payload ({} inputs, {} targets) does not match {} samples",
                self.inputs.len(),
                self.targets.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let mut buf = Vec::with_capacity(
            HEADER_LEN + self.len() * RECORD_LEN + 4 * (self.inputs.len() + self.targets.len()),
        );
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for d in [self.input_dims, self.target_dims] {
            for v in d.as_shape() {
                buf.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.carrier_freq.to_le_bytes());
        buf.extend_from_slice(&self.subcarrier_spacing.to_le_bytes());
        buf.extend_from_slice(&self.fingerprint);
        for m in &self.meta {
            buf.extend_from_slice(&m.snr_db.to_le_bytes());
            buf.extend_from_slice(&m.doppler_hz.to_le_bytes());
            buf.extend_from_slice(&m.seed.to_le_bytes());
        }
        for v in self.inputs.iter().chain(&self.targets) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Ok(buf)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::corrupt(path, reason))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic (expected OFDS)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = r.u64()? as usize;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let input_dims = TensorDims::new(dims[0], dims[1], dims[2]);
        let target_dims = TensorDims::new(dims[3], dims[4], dims[5]);
        let carrier_freq = r.f64()?;
        let subcarrier_spacing = r.f64()?;
        let mut fingerprint = [0u8; 32];
        fingerprint.copy_from_slice(r.take(32)?);
        let expected = n
            .checked_mul(RECORD_LEN + 4 * (input_dims.len() + target_dims.len()))
            .ok_or("sample count overflows")?;
        if bytes.len() - r.pos != expected {
            return Err(format!(
                "payload is {} bytes at offset {}, header implies {expected}",
                bytes.len() - r.pos,
                r.pos
            ));
        }
        let mut meta = Vec::with_capacity(n);
        for _ in 0..n {
            meta.push(SampleMeta {
                snr_db: r.f32()?,
                doppler_hz: r.f32()?,
                seed: r.u64()?,
            });
        }
        let inputs = r.f32s(n * input_dims.len())?;
        let targets = r.f32s(n * target_dims.len())?;
        Ok(Self {
            input_dims,
            target_dims,
            carrier_freq,
            subcarrier_spacing,
            fingerprint,
            meta,
            inputs,
            targets,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated at offset {} (need {n} more bytes)", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize) -> Dataset {
        Dataset {
            input_dims: TensorDims::new(24, 2, 2),
            target_dims: TensorDims::new(72, 14, 2),
            carrier_freq: 2.1e9,
            subcarrier_spacing: 15e3,
            fingerprint: [0; 32],
            meta: (0..n)
                .map(|i| SampleMeta {
                    snr_db: 5.0 * i as f32,
                    doppler_hz: 1.5,
                    seed: i as u64 * 7,
                })
                .collect(),
            inputs: (0..n * 96).map(|i| i as f32 * 0.25).collect(),
            targets: (0..n * 2016).map(|i| -(i as f32)).collect(),
        }
    }

    #[test]
    fn truncated_and_bad_files_are_rejected() {
        let bytes = sample(3).to_bytes().unwrap();
        let err = Dataset::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.contains("payload"), "{err}");
        assert!(Dataset::from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Dataset::from_bytes(&bad).unwrap_err().contains("magic"));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(Dataset::from_bytes(&bad).unwrap_err().contains("version"));
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = sample(1).to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"OFDS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN + 4 * (96 + 2016));
    }

    #[test]
    fn file_round_trip_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ofds");
        let ds = sample(4);
        ds.write(&p).unwrap();
        assert_eq!(Dataset::read(&p).unwrap(), ds);
        let d1 = file_digest(&p).unwrap();
        ds.write(&p).unwrap();
        assert_eq!(file_digest(&p).unwrap(), d1);
        assert_eq!(d1.len(), 64);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(n in 0usize..4, fp in any::<[u8; 32]>(), x in -1e3f32..1e3) {
            let mut ds = sample(n);
            ds.fingerprint = fp;
            ds.inputs.iter_mut().for_each(|v| *v += x);
            let back = Dataset::from_bytes(&ds.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
