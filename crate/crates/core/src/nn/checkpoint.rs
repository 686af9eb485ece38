//! Binary parameter checkpoints.
//!
//! Layout: the ASCII line `ADPT-CKPT v1\n`, then one record per parameter
//! until end of file. A record is a little-endian `u32` name length, the
//! UTF-8 name, a `u32` rank, `rank` `u32` dimensions and the values as
//! little-endian `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8] = b"ADPT-CKPT v1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(stores: &[&ParamStore]) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for store in stores {
        for (_, p) in store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for &v in p.value.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Cursor<'_> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8], path: &str) -> Result<Vec<Record>> {
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(CHECKPOINT_MAGIC.len()).ok() != Some(CHECKPOINT_MAGIC) {
        cur.pos = 0;
        return Err(cur.err("bad checkpoint magic"));
    }
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32()? as usize;
        let name_at = cur.pos;
        let name = match std::str::from_utf8(cur.take(name_len)?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                cur.pos = name_at;
                return Err(cur.err("parameter name is not UTF-8"));
            }
        };
        let rank = cur.u32()? as usize;
        if rank > 8 {
            return Err(cur.err(format!("implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let count: usize = dims.iter().product();
        let raw = cur.take(count * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(cur.err(format!("non-finite value in {name}")));
        }
        records.push(Record { name, dims, values });
    }
    Ok(records)
}

pub fn write_checkpoint(path: &Path, stores: &[&ParamStore]) -> Result<()> {
    fs::write(path, encode(stores)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

/// Copies every record whose name exists in `store`. Every parameter of the
/// store must be present with a matching shape.
pub fn load_into(records: &[Record], store: &mut ParamStore) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let rec = records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks parameter {name}")))?;
        let (rows, cols) = store.get(id).value.shape();
        let dims_ok = match rec.dims.as_slice() {
            [r, c] => *r == rows && *c == cols,
            _ => false,
        };
        if !dims_ok {
            return Err(Error::Integrity(format!(
                "shape of {name}: checkpoint {:?}, model {rows}x{cols}",
                rec.dims
            )));
        }
        let data = rec.values.iter().map(|&v| f64::from(v)).collect();
        store.get_mut(id).value = Matrix::from_vec(rows, cols, data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_for_f32_values() {
        let mut s = ParamStore::new();
        s.add("imitator.a.w", Matrix::from_vec(2, 2, vec![0.5, -1.25, 3.0, 1e-3f32 as f64]).unwrap())
            .unwrap();
        s.add("imitator.a.b", Matrix::zeros(1, 2)).unwrap();
        let bytes = encode(&[&s]);
        assert!(bytes.starts_with(b"ADPT-CKPT v1"));
        let recs = decode(&bytes, "mem").unwrap();
        let mut t = s.clone();
        for (_, p) in t.iter() {
            assert!(p.value.len() > 0);
        }
        t.get_mut(t.by_name("imitator.a.w").unwrap()).value = Matrix::zeros(2, 2);
        load_into(&recs, &mut t).unwrap();
        assert_eq!(s.fingerprint(), t.fingerprint());
    }

    #[test]
    fn truncation_reports_offset() {
        let mut s = ParamStore::new();
        s.add("x", Matrix::zeros(3, 3)).unwrap();
        let bytes = encode(&[&s]);
        let err = decode(&bytes[..bytes.len() - 2], "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        assert!(decode(b"nope", "mem").is_err());
    }
}
