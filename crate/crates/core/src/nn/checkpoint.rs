//! Binary checkpoint format.
//!
//! ```text
//! magic   "AIRCKPT1"                      8 bytes
//! count   u64 LE                          number of tensors
//! repeated count times:
//!   name_len u64 LE, name UTF-8 bytes
//!   rank     u64 LE
//!   dims     rank × u64 LE
//!   data     Π dims × f64 LE
//! ```
//!
//! Decoding is all-or-nothing: a truncated or trailing-garbage file is rejected
//! before any store is touched.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AIRCKPT1";

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} overflows")))
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(MAGIC).expect("ascii")
        )));
    }
    let count = r.usize("tensor count")?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for i in 0..count {
        let len = r.usize("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i} name is not UTF-8")))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        let rank = r.usize("rank")?;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {rank} for `{name}`")));
        }
        let dims = (0..rank).map(|_| r.usize("dim")).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("size overflow for `{name}`")))?;
        let raw = r.take(n.checked_mul(8).unwrap_or(usize::MAX), "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(&dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn decode_map(bytes: &[u8]) -> Result<HashMap<String, Tensor>> {
    Ok(decode(bytes)?.into_iter().collect())
}

/// Serializes every tensor of a store.
pub fn save_params(store: &ParamStore) -> Vec<u8> {
    encode(store.iter())
}

/// Restores a store from bytes holding exactly its tensor set.
pub fn load_params(store: &mut ParamStore, bytes: &[u8]) -> Result<()> {
    let entries = decode_map(bytes)?;
    if let Some(extra) = entries.keys().find(|k| store.id(k).is_none()) {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    store.assign_all(&entries)
}

/// Writes via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::matrix(2, 3, vec![1.0, -0.0, 3.25, f64::MIN_POSITIVE, 5e300, -6.5]).unwrap())
            .unwrap();
        s.add("a.b", Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap()).unwrap();
        s.add("alpha", Tensor::scalar(-0.125)).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample_store();
        let bytes = save_params(&s);
        let mut t = s.clone();
        for id in t.ids().collect::<Vec<_>>() {
            t.value_mut(id).data_mut().fill(9.0);
        }
        load_params(&mut t, &bytes).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(t.iter()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn truncated_file_rejected_without_partial_load() {
        let s = sample_store();
        let bytes = save_params(&s);
        let mut t = s.clone();
        for id in t.ids().collect::<Vec<_>>() {
            t.value_mut(id).data_mut().fill(9.0);
        }
        let before = t.clone();
        for cut in [0, 7, 8, 20, bytes.len() - 1] {
            assert!(load_params(&mut t, &bytes[..cut]).is_err(), "cut {cut}");
        }
        for ((_, a), (_, b)) in before.iter().zip(t.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shape_and_name_mismatch_rejected() {
        let s = sample_store();
        let bytes = save_params(&s);
        let mut other = ParamStore::new();
        other.add("a.w", Tensor::zeros(&[3, 2])).unwrap();
        other.add("a.b", Tensor::zeros(&[3])).unwrap();
        other.add("alpha", Tensor::scalar(0.0)).unwrap();
        let err = load_params(&mut other, &bytes).unwrap_err().to_string();
        assert!(err.contains("a.w"), "{err}");

        let mut missing = ParamStore::new();
        missing.add("a.w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(load_params(&mut missing, &bytes).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = save_params(&sample_store());
        bytes[7] = b'2';
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
    }

    proptest! {
        #[test]
        fn encode_decode_identity(values in proptest::collection::vec(any::<f64>(), 0..40), rows in 1usize..5) {
            let cols = values.len() / rows;
            let data = values[..rows * cols].to_vec();
            let t = Tensor::matrix(rows, cols, data).unwrap();
            let bytes = encode([("x", &t)]);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(back[0].1.shape(), t.shape());
            let a: Vec<u64> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
