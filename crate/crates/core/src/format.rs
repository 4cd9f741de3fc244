//! The `ZNTA` feature file.
//!
//! All fields little-endian:
//!
//! ```text
//! 0..4    magic "ZNTA"
//! 4..8    u32 version (= 1)
//! 8..12   u32 D
//! 12..16  u32 K
//! 16..24  u64 record_count
//! then    K*D f32 classifier values, row-major
//! then    record_count * (i32 label, D f32 values); label -1 is noisy
//! ```
//!
//! Class names live in a sidecar text file next to the feature file
//! (same stem, `.names` extension), one name per line in row order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{ClassifierBank, FeatureVector, GroundTruth, NoiseBank, NoiseType, StreamRecord};

pub const MAGIC: &[u8; 4] = b"ZNTA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Label value marking a noisy record.
pub const NOISY_LABEL: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub dim: u32,
    pub classes: u32,
    pub record_count: u64,
}

impl Header {
    pub fn payload_len(&self) -> u64 {
        let d = self.dim as u64;
        HEADER_LEN as u64 + self.classes as u64 * d * 4 + self.record_count * (4 + d * 4)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("names")
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }

    fn f32_row(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| f32::from_le_bytes(self.take()) as f64)
            .collect()
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut c = Cursor { buf: bytes, pos: 4 };
    let header = Header {
        version: c.u32(),
        dim: c.u32(),
        classes: c.u32(),
        record_count: c.u64(),
    };
    if header.version != VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    Ok(header)
}

/// Parses a complete feature file image. Class names are generated.
pub fn decode(bytes: &[u8]) -> Result<(ClassifierBank, Vec<StreamRecord>)> {
    let header = decode_header(bytes)?;
    let expected = header.payload_len();
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(Error::TrailingBytes {
            expected,
            actual,
        });
    }
    let dim = header.dim as usize;
    let classes = header.classes as usize;
    if dim == 0 {
        return Err(Error::BadBank("header declares D=0".into()));
    }

    let mut c = Cursor {
        buf: bytes,
        pos: HEADER_LEN,
    };
    let prototypes = (0..classes)
        .map(|_| FeatureVector::new(c.f32_row(dim)))
        .collect::<Result<Vec<_>>>()?;
    let bank = ClassifierBank::unnamed(prototypes)?;

    let mut records = Vec::with_capacity(header.record_count as usize);
    for _ in 0..header.record_count {
        let label = c.i32();
        let truth = match label {
            NOISY_LABEL => GroundTruth::Noisy,
            l if l >= 0 && (l as usize) < classes => GroundTruth::IdClass(l as usize),
            l => {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        };
        let feature = FeatureVector::new(c.f32_row(dim))?;
        records.push(StreamRecord::original(feature, truth));
    }
    Ok((bank, records))
}

/// Serializes a bank and records. Values are narrowed to `f32`; origins are
/// not stored (every record reads back as original).
pub fn encode(bank: &ClassifierBank, records: &[StreamRecord]) -> Result<Vec<u8>> {
    let dim = bank.dim();
    let classes = bank.num_classes();
    if let Some(r) = records.iter().find(|r| r.feature.dim() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: r.feature.dim(),
        });
    }
    for r in records {
        if let GroundTruth::IdClass(k) = r.truth {
            if k >= classes {
                return Err(Error::LabelOutOfRange {
                    label: k as i32,
                    classes,
                });
            }
        }
    }
    let header = Header {
        version: VERSION,
        dim: dim as u32,
        classes: classes as u32,
        record_count: records.len() as u64,
    };
    let mut out = Vec::with_capacity(header.payload_len() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.extend_from_slice(&header.dim.to_le_bytes());
    out.extend_from_slice(&header.classes.to_le_bytes());
    out.extend_from_slice(&header.record_count.to_le_bytes());
    let put_row = |out: &mut Vec<u8>, v: &[f64]| {
        for &x in v {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    for p in bank.prototypes() {
        put_row(&mut out, p.as_slice());
    }
    for r in records {
        out.extend_from_slice(&r.truth.to_label().to_le_bytes());
        put_row(&mut out, r.feature.as_slice());
    }
    Ok(out)
}

/// Reads a feature file and, if present, its class-name sidecar.
pub fn read_feature_file(path: &Path) -> Result<(ClassifierBank, Vec<StreamRecord>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (bank, records) = decode(&bytes)?;
    let names_path = sidecar_path(path);
    if !names_path.exists() {
        return Ok((bank, records));
    }
    let names = read_class_names(&names_path)?;
    let bank = ClassifierBank::new(bank.prototypes().to_vec(), names)?;
    Ok((bank, records))
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Writes the feature file and its class-name sidecar.
pub fn write_feature_file(bank: &ClassifierBank, records: &[StreamRecord], path: &Path) -> Result<()> {
    let bytes = encode(bank, records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let names_path = sidecar_path(path);
    let mut names = bank.class_names().join("\n");
    names.push('\n');
    fs::write(&names_path, names).map_err(|e| Error::io(names_path, e))
}

/// Noise banks are feature files whose records are all noisy; the classifier
/// block is ignored.
pub fn read_noise_bank(path: &Path, noise_type: NoiseType) -> Result<NoiseBank> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, records) = decode(&bytes)?;
    NoiseBank::new(noise_type, records.into_iter().map(|r| r.feature).collect())
}

pub fn write_noise_bank(bank: &ClassifierBank, noise: &NoiseBank, path: &Path) -> Result<()> {
    let records: Vec<_> = noise
        .features()
        .iter()
        .map(|f| StreamRecord::original(f.clone(), GroundTruth::Noisy))
        .collect();
    write_feature_file(bank, &records, path)
}
