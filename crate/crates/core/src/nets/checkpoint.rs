//! Binary checkpoint container.
//!
//! ```text
//! "AGWE"            magic
//! u32               format version
//! u32               tensor count
//! per tensor:
//!   u32 + bytes     UTF-8 name
//!   u8              dtype (0 = f64, 1 = f32)
//!   u8              rank (always 2)
//!   u64 × rank      shape
//!   payload         row-major little-endian values
//! u64 + bytes       JSON metadata
//! ```
//!
//! Tensors are written in name order so identical models give identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"AGWE";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Matrix>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new<T: Serialize>(tensors: BTreeMap<String, Matrix>, metadata: &T) -> Result<Self> {
        Ok(Self {
            tensors,
            metadata: serde_json::to_value(metadata)?,
        })
    }

    pub fn metadata_as<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.metadata.clone())?)
    }

    /// Tensors whose names start with `prefix`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Matrix> {
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, m) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.push(2);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for &x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
            let dtype = r.take(1)?[0];
            let rank = r.take(1)?[0];
            if rank != 2 {
                return Err(format!("tensor {name}: rank {rank} unsupported"));
            }
            let rows = usize::try_from(r.u64()?).map_err(|_| "shape overflow")?;
            let cols = usize::try_from(r.u64()?).map_err(|_| "shape overflow")?;
            let n = rows.checked_mul(cols).ok_or("shape overflow")?;
            let data: Vec<f64> = match dtype {
                DTYPE_F64 => r
                    .take(n.checked_mul(8).ok_or("shape overflow")?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DTYPE_F32 => r
                    .take(n.checked_mul(4).ok_or("shape overflow")?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                other => return Err(format!("tensor {name}: unknown dtype {other}")),
            };
            let m = Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
            tensors.insert(name, m);
        }
        let meta_len = usize::try_from(r.u64()?).map_err(|_| "metadata too large")?;
        let metadata = serde_json::from_slice(r.take(meta_len)?).map_err(|e| e.to_string())?;
        if r.pos != bytes.len() {
            return Err("trailing bytes after metadata".into());
        }
        Ok(Self { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Matrix::from_vec(1, 2, vec![1.0, -2.0]).unwrap());
        let ck = Checkpoint::new(tensors, &serde_json::json!({"epoch": 3})).unwrap();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"AGWE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes[16], b'w');
        assert_eq!(&bytes[17..19], &[0, 2]);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let ck = Checkpoint::default();
        let mut bytes = ck.to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    proptest! {
        #[test]
        fn byte_round_trip(values in prop::collection::vec(-1e6f64..1e6, 1..24), rows in 1usize..4, epoch in 0u32..100) {
            let cols = values.len() / rows;
            prop_assume!(cols > 0);
            let m = Matrix::from_vec(rows, cols, values[..rows * cols].to_vec()).unwrap();
            let mut tensors = BTreeMap::new();
            tensors.insert("a.b".to_string(), m.clone());
            tensors.insert("z".to_string(), m);
            let ck = Checkpoint::new(tensors, &serde_json::json!({"epoch": epoch, "history": [0.5, 0.25]})).unwrap();
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, ck);
        }
    }
}
