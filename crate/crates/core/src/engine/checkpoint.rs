//! Parameter checkpoint file.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "MRCKPT\0\0"
//! version      u32       currently 1
//! count        u32       number of tensors
//! repeated `count` times:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   dtype      u8        0 = f64, 1 = i64
//!   rank       u32
//!   dims       rank x u64
//!   payload    u64       byte length, must equal 8 * product(dims)
//!   data       payload bytes, row-major, 8 bytes per element
//! ```
//!
//! Trailing bytes after the last tensor are rejected.

use std::path::Path;

use super::{numel, DType, EngineError, ParamStore, Tensor, TensorData};

pub const MAGIC: &[u8; 8] = b"MRCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let items: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (name, t) in items {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(match t.dtype() {
            DType::F64 => 0,
            DType::I64 => 1,
        });
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&((t.len() * 8) as u64).to_le_bytes());
        match t.data() {
            TensorData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::I64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EngineError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(EngineError::CorruptCheckpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, EngineError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, EngineError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, EngineError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(EngineError::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(EngineError::VersionMismatch {
            found: version.to_string(),
            expected: VERSION.to_string(),
        });
    }
    let count = r.u32("count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| EngineError::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.take(1, "dtype")?[0];
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u64("dim")? as usize);
        }
        let payload = r.u64("payload length")? as usize;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if n.and_then(|n| n.checked_mul(8)) != Some(payload) {
            return Err(EngineError::CorruptCheckpoint(format!(
                "tensor {name}: payload of {payload} bytes does not fit shape {shape:?}"
            )));
        }
        let data = r.take(payload, "payload")?;
        let words = data
            .chunks_exact(8)
            .map(|c| <[u8; 8]>::try_from(c).unwrap());
        let t = match dtype {
            0 => Tensor::from_f64(shape, words.map(f64::from_le_bytes).collect())?,
            1 => Tensor::from_i64(shape, words.map(i64::from_le_bytes).collect())?,
            d => {
                return Err(EngineError::CorruptCheckpoint(format!(
                    "tensor {name}: unknown dtype tag {d}"
                )))
            }
        };
        debug_assert_eq!(numel(t.shape()), t.len());
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(EngineError::CorruptCheckpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save(path: &Path, params: &ParamStore) -> Result<(), EngineError> {
    std::fs::write(path, encode(params.iter()))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore, EngineError> {
    let bytes = std::fs::read(path)
        .map_err(|e| EngineError::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    let mut store = ParamStore::new();
    for (name, t) in decode(&bytes)? {
        store.insert(name, t)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_of_a_single_scalar() {
        let t = Tensor::scalar(1.5);
        let bytes = encode([("w", &t)]);
        let mut expected = b"MRCKPT\0\0".to_vec();
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend([1, 0, 0, 0, b'w', 0]);
        expected.extend([0, 0, 0, 0]);
        expected.extend([8, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend(1.5f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let t = Tensor::from_f64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = encode([("m", &t)]);
        bytes.pop();
        assert!(matches!(
            decode(&bytes),
            Err(EngineError::CorruptCheckpoint(_))
        ));
        let mut longer = encode([("m", &t)]);
        longer.push(0);
        assert!(matches!(
            decode(&longer),
            Err(EngineError::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn wrong_version_is_reported() {
        let mut bytes = encode([("w", &Tensor::scalar(0.0))]);
        bytes[8] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(EngineError::VersionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip(rows in 0usize..4, cols in 0usize..4, seed in any::<u64>(), ints in any::<bool>()) {
            let n = rows * cols;
            let t = if ints {
                Tensor::from_i64(vec![rows, cols], (0..n as i64).map(|i| i.wrapping_mul(seed as i64)).collect()).unwrap()
            } else {
                Tensor::from_f64(vec![rows, cols], (0..n).map(|i| (i as f64 + seed as f64).sin()).collect()).unwrap()
            };
            let back = decode(&encode([("t", &t), ("s", &Tensor::scalar(-0.0))])).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0].1, &t);
            prop_assert_eq!(back[1].1.as_f64().unwrap()[0].to_bits(), (-0.0f64).to_bits());
        }
    }
}
