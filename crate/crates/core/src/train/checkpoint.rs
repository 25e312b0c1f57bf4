//! Binary checkpoint: `"SKG1"`, version (u32 LE), JSON metadata length
//! (u32 LE) and bytes, raw f32 LE arrays in manifest order, CRC-32 of
//! everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::optim::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SKG1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata; serialized with sorted keys.
    pub meta: Value,
    pub blobs: Vec<(BlobInfo, Vec<f32>)>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Self { meta, blobs: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.blobs.push((BlobInfo { name: name.into(), shape }, data));
    }

    pub fn blob(&self, name: &str) -> Result<&(BlobInfo, Vec<f32>)> {
        self.blobs
            .iter()
            .find(|(b, _)| b.name == name)
            .ok_or_else(|| err(format!("missing blob {name}")))
    }

    /// Adds every entry of `store` under `component/`.
    pub fn add_store(&mut self, component: &str, store: &ParamStore<f32>) {
        for e in store.entries() {
            self.push(format!("{component}/{}", e.name), e.tensor.shape().to_vec(), e.tensor.data().to_vec());
        }
    }

    /// Overwrites `store` from the blobs of `component`; names and shapes
    /// must match exactly.
    pub fn load_store(&self, component: &str, store: &mut ParamStore<f32>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        let mut loaded = Vec::with_capacity(ids.len());
        for &id in &ids {
            let e = store.entry(id);
            let (info, data) = self.blob(&format!("{component}/{}", e.name))?;
            if info.shape != e.tensor.shape() {
                return Err(err(format!("shape of {} is {:?}, expected {:?}", info.name, info.shape, e.tensor.shape())));
            }
            loaded.push(Tensor::new(info.shape.clone(), data.clone())?);
        }
        for (id, t) in ids.into_iter().zip(loaded) {
            *store.get_mut(id) = t;
        }
        Ok(())
    }

    pub fn add_adam(&mut self, component: &str, state: &AdamState<f32>) {
        for (i, (m, v)) in state.m.iter().zip(&state.v).enumerate() {
            self.push(format!("{component}/m/{i}"), vec![m.len()], m.clone());
            self.push(format!("{component}/v/{i}"), vec![v.len()], v.clone());
        }
    }

    pub fn load_adam(&self, component: &str, config: AdamConfig, step: u64, len: usize) -> Result<AdamState<f32>> {
        let mut st = AdamState {
            config,
            step,
            m: Vec::with_capacity(len),
            v: Vec::with_capacity(len),
        };
        for i in 0..len {
            st.m.push(self.blob(&format!("{component}/m/{i}"))?.1.clone());
            st.v.push(self.blob(&format!("{component}/v/{i}"))?.1.clone());
        }
        Ok(st)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest: Vec<&BlobInfo> = self.blobs.iter().map(|(b, _)| b).collect();
        let header = serde_json::json!({ "meta": self.meta, "blobs": manifest });
        let json = serde_json::to_vec(&header)?;
        for (b, d) in &self.blobs {
            if b.shape.iter().product::<usize>() != d.len() {
                return Err(err(format!("blob {} has {} values for shape {:?}", b.name, d.len(), b.shape)));
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| err("metadata too large"))?.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, d) in &self.blobs {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(err("file is truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(err("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(err("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let json = body.get(12..12 + len).ok_or_else(|| err("file is truncated"))?;
        let mut header: Value = serde_json::from_slice(json)?;
        let manifest: Vec<BlobInfo> = serde_json::from_value(header["blobs"].take())?;
        let meta = header["meta"].take();
        let mut pos = 12 + len;
        let mut blobs = Vec::with_capacity(manifest.len());
        for info in manifest {
            let n: usize = info.shape.iter().product();
            let raw = body.get(pos..pos + 4 * n).ok_or_else(|| err("file is truncated"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            pos += 4 * n;
            blobs.push((info, data));
        }
        if pos != body.len() {
            return Err(err("trailing bytes after parameter data"));
        }
        Ok(Self { meta, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
