//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `ESCBA001`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then the raw little-endian tensor payloads in header
//! order. Offsets in the header are relative to the start of the payload block.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ESCBA001";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Tensor<f32>),
    I32 { shape: Vec<usize>, data: Vec<i32> },
}

impl Payload {
    fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32,
            Payload::I32 { .. } => DType::I32,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            Payload::F32(t) => t.shape(),
            Payload::I32 { shape, .. } => shape,
        }
    }

    fn byte_len(&self) -> usize {
        4 * self.shape().iter().product::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DType {
    F32,
    I32,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

/// In-memory form of a container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Payload)>,
}

impl Container {
    pub fn new(meta: serde_json::Value, entries: Vec<(String, Payload)>) -> Self {
        Container { meta, entries }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0u64;
        let mut tensors = Vec::with_capacity(self.entries.len());
        for (name, p) in &self.entries {
            tensors.push(TensorEntry {
                name: name.clone(),
                dtype: p.dtype(),
                shape: p.shape().to_vec(),
                offset,
            });
            offset += p.byte_len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            tensors,
            meta: self.meta.clone(),
        })?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, p) in &self.entries {
            match p {
                Payload::F32(t) => {
                    for v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Payload::I32 { data, .. } => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut entries = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            let bytes = payload
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("payload of {} is truncated", e.name)))?;
            let words = bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
            let p = match e.dtype {
                DType::F32 => Payload::F32(Tensor::new(
                    e.shape,
                    words.map(f32::from_le_bytes).collect(),
                )?),
                DType::I32 => Payload::I32 {
                    shape: e.shape,
                    data: words.map(i32::from_le_bytes).collect(),
                },
            };
            entries.push((e.name, p));
        }
        Ok(Container {
            meta: header.meta,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_starts_with_magic_and_header_length() {
        let c = Container::new(
            serde_json::json!({}),
            vec![("x".into(), Payload::F32(Tensor::vector(vec![1.0f32, -2.5])))],
        );
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"ESCBA001");
        let hlen = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[16..16 + hlen]).unwrap();
        assert_eq!(header["tensors"][0]["name"], "x");
        assert_eq!(header["tensors"][0]["offset"], 0);
        assert_eq!(&buf[16 + hlen..16 + hlen + 4], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 16 + hlen + 8);
    }

    #[test]
    fn mixed_dtypes_round_trip() {
        let c = Container::new(
            serde_json::json!({"k": [1, 2]}),
            vec![
                (
                    "a".into(),
                    Payload::I32 {
                        shape: vec![2, 2],
                        data: vec![1, 2, 3, -4],
                    },
                ),
                (
                    "b".into(),
                    Payload::F32(Tensor::vector(vec![f32::MIN_POSITIVE])),
                ),
            ],
        );
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Container::read_from(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = Container::read_from(&b"NOTMAGIC\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
