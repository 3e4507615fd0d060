//! The `FVTB` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 0..4             | magic `FVTB`                              |
//! | 4..8             | format version (`u32`)                    |
//! | 8..16            | header length `H` in bytes (`u64`)        |
//! | 16..16+H         | UTF-8 JSON header                         |
//! | padding          | zeros up to the next multiple of 64       |
//! | payload          | tensors, each starting 64-byte aligned    |
//!
//! There is no padding after the last tensor.
//!
//! The header is `{"tensors": [{name, dtype, shape, byte_offset,
//! byte_length}], "metadata": {...}}` with absolute byte offsets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FVTB";
pub const VERSION: u32 = 1;
const ALIGN: usize = 64;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A named tensor. Values are held as `f64`; `F32` tensors are rounded on
/// write and widened exactly on read.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    #[serde(default)]
    metadata: serde_json::Map<String, serde_json::Value>,
}

/// In-memory container: tensors by name plus free-form JSON metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    tensors: BTreeMap<String, Tensor>,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

fn round_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a tensor; `data.len()` must equal the shape product.
    pub fn insert(
        &mut self,
        name: &str,
        dtype: Dtype,
        shape: &[usize],
        data: Vec<f64>,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "tensor {name}: shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        let data = match dtype {
            Dtype::F64 => data,
            Dtype::F32 => data.into_iter().map(|v| v as f32 as f64).collect(),
        };
        self.tensors.insert(
            name.to_string(),
            Tensor {
                dtype,
                shape: shape.to_vec(),
                data,
            },
        );
        Ok(())
    }

    pub fn insert_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.insert(name, Dtype::F64, shape, data)
    }

    /// A one-element `f64` tensor.
    pub fn insert_scalar(&mut self, name: &str, value: f64) {
        self.insert_f64(name, &[1], vec![value])
            .expect("scalar shape");
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Corrupt(format!("container has no tensor named {name}")))
    }

    /// Tensor `name` checked against an expected shape.
    pub fn tensor_shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.tensor(name)?;
        if t.shape != shape {
            return Err(Error::Corrupt(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.tensor_shaped(name, &[1])?.data[0])
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                Error::Corrupt(format!("metadata field {key} is missing or not a string"))
            })
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.metadata
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| {
                Error::Corrupt(format!("metadata field {key} is missing or not an integer"))
            })
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        usize::try_from(self.meta_u64(key)?)
            .map_err(|_| Error::Corrupt(format!("metadata field {key} is too large")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        // The header's size depends on the offsets it lists, so lay the
        // payload out against a provisional header and retry until stable.
        let mut payload_start = round_up(PREAMBLE);
        loop {
            let mut entries = vec![];
            let mut cursor = payload_start;
            for (name, t) in &self.tensors {
                let len = t.data.len() * t.dtype.size();
                entries.push(Entry {
                    name: name.clone(),
                    dtype: t.dtype,
                    shape: t.shape.clone(),
                    byte_offset: cursor,
                    byte_length: len,
                });
                cursor = round_up(cursor + len);
            }
            let header = serde_json::to_vec(&Header {
                tensors: entries,
                metadata: self.metadata.clone(),
            })
            .map_err(|e| Error::Corrupt(format!("cannot encode header: {e}")))?;
            let needed = round_up(PREAMBLE + header.len());
            if needed > payload_start {
                payload_start = needed;
                continue;
            }
            let mut out = Vec::with_capacity(cursor);
            out.extend_from_slice(MAGIC);
            out.extend_from_slice(&VERSION.to_le_bytes());
            out.extend_from_slice(&(header.len() as u64).to_le_bytes());
            out.extend_from_slice(&header);
            out.resize(payload_start, 0);
            // Pad between tensors only, so the file ends with the last
            // tensor's final byte and any truncation is detectable.
            for t in self.tensors.values() {
                out.resize(round_up(out.len()), 0);
                match t.dtype {
                    Dtype::F64 => t
                        .data
                        .iter()
                        .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                    Dtype::F32 => t
                        .data
                        .iter()
                        .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
                }
            }
            return Ok(out);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE {
            return Err(Error::Corrupt(format!(
                "container is truncated ({} bytes)",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Corrupt("bad magic; not an FVTB container".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(PREAMBLE))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Corrupt("header extends past the end of the file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;

        let mut spans = vec![];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Corrupt(format!("tensor {} shape overflows", e.name)))?;
            if count.checked_mul(e.dtype.size()) != Some(e.byte_length) {
                return Err(Error::Corrupt(format!(
                    "tensor {}: {} bytes do not match shape {:?} of {:?}",
                    e.name, e.byte_length, e.shape, e.dtype
                )));
            }
            let end = e
                .byte_offset
                .checked_add(e.byte_length)
                .filter(|&end| e.byte_offset >= header_end && end <= bytes.len())
                .ok_or_else(|| {
                    Error::Corrupt(format!("tensor {} lies outside the payload", e.name))
                })?;
            spans.push((e.byte_offset, end, e.name.clone()));
            let raw = &bytes[e.byte_offset..end];
            let data: Vec<f64> = match e.dtype {
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            let t = Tensor {
                dtype: e.dtype,
                shape: e.shape,
                data,
            };
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(Error::Corrupt(format!("duplicate tensor name {}", e.name)));
            }
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Corrupt(format!(
                    "tensors {} and {} overlap",
                    w[0].2, w[1].2
                )));
            }
        }
        Ok(Self {
            tensors,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Short stable hash of a JSON value (keys are sorted by `serde_json`'s
/// default map), used to tag models with the configuration that made them.
pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("JSON values always serialize");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.insert_f64(
            "a",
            &[2, 3],
            vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 1e300, -0.0],
        )
        .unwrap();
        c.insert("b", Dtype::F32, &[3], vec![0.1, 0.2, 0.3])
            .unwrap();
        c.insert_scalar("s", std::f64::consts::PI);
        c.metadata.insert("kind".into(), "test".into());
        c
    }

    #[test]
    fn round_trip_is_exact_and_aligned() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensor("b").unwrap().data[0], 0.1f32 as f64);
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value =
            serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
        for t in header["tensors"].as_array().unwrap() {
            assert_eq!(t["byte_offset"].as_u64().unwrap() % 64, 0);
        }
    }

    #[test]
    fn truncation_and_garbage_are_corrupt() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 3, 15, 40, bytes.len() - 1] {
            assert!(
                matches!(Container::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Container::from_bytes(&bad),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn version_mismatch_names_both() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        match Container::from_bytes(&bytes) {
            Err(
                e @ Error::Version {
                    found: 7,
                    expected: 1,
                },
            ) => {
                let msg = e.to_string();
                assert!(msg.contains('7') && msg.contains('1'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_key_order_does_not_matter() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value =
            serde_json::from_slice(&bytes[16..16 + header_len]).unwrap();
        // Re-emit every object with its keys reversed.
        fn reversed(v: &serde_json::Value) -> String {
            match v {
                serde_json::Value::Object(m) => {
                    let parts: Vec<String> = m
                        .iter()
                        .rev()
                        .map(|(k, v)| {
                            format!("{}:{}", serde_json::to_string(k).unwrap(), reversed(v))
                        })
                        .collect();
                    format!("{{{}}}", parts.join(","))
                }
                serde_json::Value::Array(a) => {
                    format!("[{}]", a.iter().map(reversed).collect::<Vec<_>>().join(","))
                }
                other => other.to_string(),
            }
        }
        let text = reversed(&header);
        assert_eq!(text.len(), header_len);
        let mut swapped = bytes.clone();
        swapped[16..16 + header_len].copy_from_slice(text.as_bytes());
        assert_eq!(Container::from_bytes(&swapped).unwrap(), c);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut c = Container::new();
        assert!(matches!(
            c.insert_f64("x", &[2, 2], vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
    }
}
