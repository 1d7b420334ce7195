//! Binary checkpoint format.
//!
//! ```text
//! "TJGP" | u32 version | u32 len | header JSON | u32 count | records…
//! record: u32 len | name | u32 rows | u32 cols | u8 precision | values (LE)
//! ```
//!
//! The header carries the model config, the step counter, the seed and an
//! optional free-form provenance object supplied by the writer. The
//! optimizer moments, when present, follow the parameters as two flat
//! records so that a resumed run continues bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use super::train::AdamState;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Precision, Scalar};

pub const MAGIC: &[u8; 4] = b"TJGP";
pub const VERSION: u32 = 1;
const OPT_M: &str = "optimizer.m";
const OPT_V: &str = "optimizer.v";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub precision: Precision,
    pub step: u64,
    pub seed: u64,
    pub has_optimizer: bool,
    /// Writer-supplied metadata (tool version, run config hash).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub params: ModelParams<T>,
    pub optimizer: Option<AdamState<T>>,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_record<T: Scalar>(out: &mut Vec<u8>, name: &str, m: &Matrix<T>) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, m.rows() as u32);
    push_u32(out, m.cols() as u32);
    out.push(T::PRECISION.tag());
    for &v in m.data() {
        v.write_le(out);
    }
}

/// Serializes parameters and, optionally, optimizer state.
pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>, optimizer: Option<&AdamState<T>>, seed: u64) -> Vec<u8> {
    encode_checkpoint_with(params, optimizer, seed, None)
}

/// [`encode_checkpoint`] with a provenance object stored in the header.
pub fn encode_checkpoint_with<T: Scalar>(
    params: &ModelParams<T>,
    optimizer: Option<&AdamState<T>>,
    seed: u64,
    provenance: Option<serde_json::Value>,
) -> Vec<u8> {
    let header = CheckpointHeader {
        config: params.config.clone(),
        precision: T::PRECISION,
        step: optimizer.map_or(0, |a| a.step),
        seed,
        has_optimizer: optimizer.is_some(),
        provenance,
    };
    let text = serde_json::to_string(&header).expect("header serializes");
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    push_u32(&mut out, (tensors.len() + if optimizer.is_some() { 2 } else { 0 }) as u32);
    for (name, m) in &tensors {
        push_record(&mut out, name, m);
    }
    if let Some(a) = optimizer {
        push_record(&mut out, OPT_M, &Matrix::from_parts(1, a.m.len(), a.m.clone()));
        push_record(&mut out, OPT_V, &Matrix::from_parts(1, a.v.len(), a.v.clone()));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.at,
                self.bytes.len() - self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads the header only, e.g. to pick the precision before a full load.
pub fn decode_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    let mut r = Reader { bytes, at: 0 };
    header(&mut r)
}

fn header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic bytes {magic:?}, not a checkpoint")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let len = r.u32("header length")? as usize;
    let text = r.take(len, "header")?;
    let text = std::str::from_utf8(text).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
    serde_json::from_str(text).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))
}

fn record<T: Scalar>(r: &mut Reader<'_>, name: &str, shape: (usize, usize)) -> Result<Matrix<T>> {
    let len = r.u32("record name length")? as usize;
    let stored_name = r.take(len, "record name")?;
    let stored_name = String::from_utf8_lossy(stored_name).into_owned();
    if stored_name != name {
        return Err(Error::Format(format!("record {stored_name} where {name} was expected")));
    }
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    if (rows, cols) != shape {
        return Err(Error::Shape { name: name.to_string(), stored: (rows, cols), expected: shape });
    }
    let tag = r.take(1, "precision tag")?[0];
    let stored = Precision::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown precision tag {tag}")))?;
    if stored != T::PRECISION {
        return Err(Error::PrecisionMismatch { stored, requested: T::PRECISION });
    }
    let w = stored.byte_width();
    let raw = r.take(rows * cols * w, name)?;
    let data: Vec<T> = raw.chunks_exact(w).map(T::read_le).collect();
    Matrix::from_vec(rows, cols, data).map_err(|_| Error::Format(format!("{name} holds non-finite values")))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, at: 0 };
    let header = header(&mut r)?;
    if header.precision != T::PRECISION {
        return Err(Error::PrecisionMismatch { stored: header.precision, requested: T::PRECISION });
    }
    header.config.validate().map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;
    let expected = ModelParams::<T>::expected_shapes(&header.config);
    let count = r.u32("record count")? as usize;
    let want = expected.len() + if header.has_optimizer { 2 } else { 0 };
    if count != want {
        return Err(Error::Format(format!("{count} records, expected {want}")));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        tensors.push((name.clone(), record::<T>(&mut r, name, *shape)?));
    }
    let params = ModelParams::from_tensors(&header.config, tensors)?;
    let optimizer = if header.has_optimizer {
        let np = params.num_params();
        let m = record::<T>(&mut r, OPT_M, (1, np))?.into_data();
        let v = record::<T>(&mut r, OPT_V, (1, np))?.into_data();
        Some(AdamState { m, v, step: header.step })
    } else {
        None
    };
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(Checkpoint { header, params, optimizer })
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    params: &ModelParams<T>,
    optimizer: Option<&AdamState<T>>,
    seed: u64,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params, optimizer, seed)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Header of a checkpoint file.
pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_header(&bytes)
}
