//! Named weight tensors and their flat binary container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DWTS" | u32 count | count × ( u16 name_len | name | u8 dtype | u8 rank | rank × u32 dim | raw elements )
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::{Precision, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"DWTS";

#[derive(Debug, Error)]
pub enum WeightStoreError {
    #[error("weight store truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("bad weight store magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unknown dtype tag {tag} for `{name}`")]
    BadDtype { name: String, tag: u8 },
    #[error("weight name is not valid UTF-8 at byte {0}")]
    BadName(usize),
    #[error("weight name `{0}` longer than 65535 bytes")]
    NameTooLong(String),
    #[error("duplicate weight `{0}`")]
    Duplicate(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of stored elements.
    pub fn element_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WeightStoreError> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len())
                .map_err(|_| WeightStoreError::NameTooLong(name.clone()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.precision().tag());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&t.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightStoreError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != WEIGHTS_MAGIC {
            return Err(WeightStoreError::BadMagic(magic));
        }
        let count = r.u32("count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| WeightStoreError::BadName(name_at))?
                .to_string();
            let tag = r.u8("dtype")?;
            let precision =
                Precision::from_tag(tag).ok_or_else(|| WeightStoreError::BadDtype { name: name.clone(), tag })?;
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(precision.width(), |acc, &d| acc.checked_mul(d))
                .ok_or(WeightStoreError::Truncated { offset: r.pos, what: "elements" })?;
            let raw = r.take(n, "elements")?;
            let t = Tensor::from_le_bytes(shape, precision, raw).expect("length checked");
            if store.insert(name.clone(), t).is_some() {
                return Err(WeightStoreError::Duplicate(name));
            }
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightStoreError> {
        fs::write(path, self.to_bytes()?).map_err(|source| WeightStoreError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, WeightStoreError> {
        let bytes = fs::read(path).map_err(|source| WeightStoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightStoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(WeightStoreError::Truncated { offset: self.pos, what })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WeightStoreError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, WeightStoreError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightStoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}
