//! Binary parameter checkpoints.
//!
//! Layout: `u64` LE header length, a JSON header `{kind, names, shapes, meta}`,
//! then every parameter's values as little-endian `f32`, in header order.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    meta: serde_json::Value,
}

/// A loaded checkpoint: model kind, free-form metadata, and named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(kind: &str, meta: &impl Serialize, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            meta: serde_json::to_value(meta)?,
            params: store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        })
    }

    pub fn meta_as<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.meta.clone())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            names: self.params.iter().map(|(n, _)| n.clone()).collect(),
            shapes: self.params.iter().map(|(_, t)| t.shape().to_vec()).collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let n: usize = self.params.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 4 * n);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.params {
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(origin, msg);
        let len_bytes: [u8; 8] = bytes.get(..8).and_then(|b| b.try_into().ok()).ok_or_else(|| bad("truncated header length".into()))?;
        let len = u64::from_le_bytes(len_bytes) as usize;
        let json = bytes.get(8..8usize.saturating_add(len)).ok_or_else(|| bad(format!("header of {len} bytes is truncated")))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.names.len() != header.shapes.len() {
            return Err(bad("names and shapes differ in length".into()));
        }
        let mut body = &bytes[8 + len..];
        let mut params = Vec::with_capacity(header.names.len());
        for (name, shape) in header.names.into_iter().zip(header.shapes) {
            let n: usize = shape.iter().product();
            if body.len() < 4 * n {
                return Err(bad(format!("data for {name} is truncated")));
            }
            let (chunk, rest) = body.split_at(4 * n);
            body = rest;
            let data = chunk.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        if !body.is_empty() {
            return Err(bad(format!("{} trailing bytes", body.len())));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Errors unless the checkpoint holds a model of `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidArgument(format!("checkpoint holds a {} model, expected {kind}", self.kind)));
        }
        Ok(())
    }

    /// Copies every stored tensor into the parameter of the same name.
    ///
    /// The parameter sets must match exactly, names and shapes.
    pub fn restore(&self, store: &mut ParamStore) -> Result<()> {
        if self.params.len() != store.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        let by_name: std::collections::HashMap<&str, &Tensor> = self.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in store.iter_mut() {
            let t = by_name.get(p.name.as_str()).ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {}: checkpoint {:?}, model {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = (*t).clone();
        }
        Ok(())
    }
}
