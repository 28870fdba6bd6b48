//! Named-tensor container: magic, little-endian `u64` header length, a JSON
//! header with the dtype and name/shape table, then every tensor's values as
//! raw little-endian bytes in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MergeError, ParamSet};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DRTENSOR";

/// Scalars with a fixed little-endian encoding.
pub trait Storable: Scalar {
    const DTYPE: &'static str;
    const WIDTH: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl Storable for f32 {
    const DTYPE: &'static str = "f32";
    const WIDTH: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("width"))
    }
}

impl Storable for f64 {
    const DTYPE: &'static str = "f64";
    const WIDTH: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("width"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode<T: Storable>(set: &ParamSet<T>) -> Vec<u8> {
    let header = Header {
        dtype: T::DTYPE.to_string(),
        tensors: set
            .iter()
            .map(|(name, t)| Entry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("serializable header");
    let mut out = Vec::with_capacity(16 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in set.iter() {
        for v in &t.data {
            v.put(&mut out);
        }
    }
    out
}

fn split_header(bytes: &[u8]) -> Result<(Header, &[u8]), MergeError> {
    let bad = |m: &str| MergeError::Format(m.to_string());
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let (len, rest) = rest.split_at(8);
    let len = usize::try_from(u64::from_le_bytes(len.try_into().expect("8 bytes"))).map_err(|_| bad("header too large"))?;
    if rest.len() < len {
        return Err(bad("truncated header"));
    }
    let (header, body) = rest.split_at(len);
    let header: Header = serde_json::from_slice(header).map_err(|e| MergeError::Format(e.to_string()))?;
    Ok((header, body))
}

/// Storage dtype recorded in an encoded container.
pub fn sniff_dtype(bytes: &[u8]) -> Result<String, MergeError> {
    Ok(split_header(bytes)?.0.dtype)
}

pub fn decode<T: Storable>(bytes: &[u8]) -> Result<ParamSet<T>, MergeError> {
    let (header, mut body) = split_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(MergeError::Dtype {
            expected: T::DTYPE,
            found: header.dtype,
        });
    }
    let mut set = ParamSet::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let need = n.checked_mul(T::WIDTH).filter(|b| *b <= body.len());
        let Some(need) = need else {
            return Err(MergeError::Format(format!("data for '{}' is truncated", e.name)));
        };
        let (chunk, rest) = body.split_at(need);
        body = rest;
        let data = chunk.chunks_exact(T::WIDTH).map(T::take).collect();
        set.insert(e.name, e.shape, data)?;
    }
    if !body.is_empty() {
        return Err(MergeError::Format(format!("{} trailing bytes", body.len())));
    }
    Ok(set)
}

pub fn write_tensors<T: Storable>(path: &Path, set: &ParamSet<T>) -> Result<(), MergeError> {
    std::fs::File::create(path)?.write_all(&encode(set))?;
    Ok(())
}

pub fn read_tensors<T: Storable>(path: &Path) -> Result<ParamSet<T>, MergeError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let set = ParamSet::<f32>::new()
            .with("a.weight", vec![2, 3], vec![0.1, -2.5, 3.0e-30, 7.0, f32::MAX, -0.0])
            .unwrap()
            .with("b", vec![], vec![1.25])
            .unwrap();
        let bytes = encode(&set);
        assert_eq!(sniff_dtype(&bytes).unwrap(), "f32");
        let back: ParamSet<f32> = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
        assert_eq!(back.get("a.weight").unwrap().data[5].to_bits(), (-0.0f32).to_bits());
        assert!(matches!(decode::<f64>(&bytes), Err(MergeError::Dtype { .. })));
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode::<f32>(b"nope").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tensors");
        let set = ParamSet::<f64>::new().with("w", vec![2], vec![1.0, 2.0]).unwrap();
        write_tensors(&path, &set).unwrap();
        assert_eq!(read_tensors::<f64>(&path).unwrap(), set);
    }
}
