//! Parameter checkpoints.
//!
//! Layout on disk:
//!
//! ```text
//! [u64 LE: header length N][N bytes: JSON header][payload: f64 LE values]
//! ```
//!
//! The header is `{"format":"personaforge-checkpoint","version":1,"meta":{..},
//! "tensors":[{"name":..,"shape":[..],"offset":..}]}` where `offset` is the
//! byte offset of the tensor's first value relative to the payload start.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Params, Tensor};
use crate::error::{Error, Result};

pub const FORMAT: &str = "personaforge-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params<P: Params + ?Sized>(params: &P, prefix: &str) -> Self {
        let mut ck = Self::default();
        ck.extend_from(params, prefix);
        ck
    }

    pub fn extend_from<P: Params + ?Sized>(&mut self, params: &P, prefix: &str) {
        params.visit(prefix, &mut |name, t| self.tensors.push((name, t.clone())));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored tensors into `params`; every visited name must exist
    /// with an identical shape.
    pub fn load_into<P: Params + ?Sized>(&self, params: &mut P, prefix: &str) -> Result<()> {
        let index: BTreeMap<&str, &Tensor> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        params.visit_mut(prefix, &mut |name, t| {
            if err.is_some() {
                return;
            }
            match index.get(name.as_str()) {
                Some(src) if src.shape() == t.shape() => *t = (*src).clone(),
                Some(src) => {
                    err = Some(Error::Checkpoint(format!(
                        "{name}: stored shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 8 * t.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            format: FORMAT.into(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let payload_start = 8usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[8..payload_start])?;
        if header.format != FORMAT {
            return Err(bad(&format!("unknown format {:?}", header.format)));
        }
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        let payload = &bytes[payload_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > payload.len() {
                return Err(bad(&format!("tensor {} overruns payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
