//! Weight container format.
//!
//! ```text
//! "SDDSW1" | header length (u64 LE) | JSON header | tensor data (f64 LE)
//! ```
//!
//! The header lists every tensor's name, shape and byte offset into the data
//! section, plus an optional free-form `meta` value (models store their spec
//! there).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::NamedTensor;
use super::tensor::Tensor;
use crate::error::{io_err, Result, SddsError};

pub const MAGIC: &[u8; 6] = b"SDDSW1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

pub fn encode(tensors: &[NamedTensor], meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|t| {
            let e = Entry { name: t.name.clone(), shape: t.tensor.shape().to_vec(), offset };
            offset += 8 * t.tensor.numel() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header { meta: meta.clone(), tensors: entries })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    let err = |m: &str| SddsError::Container(m.to_string());
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(err("missing SDDSW1 magic"));
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[6..14]);
    let header_len = u64::from_le_bytes(len) as usize;
    let data_start = 14usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[14..data_start])?;
    let data = &bytes[data_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * numel;
        if end > data.len() {
            return Err(SddsError::Container(format!("tensor {} runs past end of file", e.name)));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(NamedTensor { name: e.name, tensor: Tensor::new(e.shape, values)? });
    }
    Ok(Container { meta: header.meta, tensors })
}

pub fn write(path: &Path, tensors: &[NamedTensor], meta: &serde_json::Value) -> Result<()> {
    let bytes = encode(tensors, meta)?;
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

pub fn read(path: &Path) -> Result<Container> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(proptest::num::f64::ANY, 1..40)) {
            let n = values.len();
            let tensors = vec![
                NamedTensor { name: "a.weight".into(), tensor: Tensor::new(vec![n], values.clone()).unwrap() },
                NamedTensor { name: "b".into(), tensor: Tensor::new(vec![1, 2], vec![-0.0, f64::MIN_POSITIVE]).unwrap() },
            ];
            let meta = serde_json::json!({"k": 1});
            let back = decode(&encode(&tensors, &meta).unwrap()).unwrap();
            prop_assert_eq!(back.meta, meta);
            prop_assert_eq!(back.tensors.len(), 2);
            for (a, b) in back.tensors.iter().zip(&tensors) {
                prop_assert_eq!(&a.name, &b.name);
                let abits: Vec<u64> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"NOPE000000000000").is_err());
        let t = vec![NamedTensor { name: "x".into(), tensor: Tensor::zeros(&[4]) }];
        let bytes = encode(&t, &serde_json::Value::Null).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
