//! Tensor container: a one-line JSON manifest followed by a blob of
//! little-endian `f64` values.
//!
//! ```text
//! {"format":"remaster-tensors","version":1,"meta":{..},"tensors":[{"name":..,"shape":[..],"offset":..}]}\n
//! <raw little-endian f64 bytes>
//! ```
//!
//! Offsets are byte offsets into the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkShape};

const FORMAT: &str = "remaster-tensors";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            let n: usize = t.shape.iter().product();
            if n != t.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has {} values but shape {:?}",
                    t.name,
                    t.data.len(),
                    t.shape
                )));
            }
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += 8 * n;
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let mut out = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.push(b'\n');
        out.reserve(offset);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing manifest terminator".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[..split]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                manifest.format, manifest.version
            )));
        }
        let blob = &bytes[split + 1..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset + 8 * n;
            if end > blob.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past end of blob", e.name)));
            }
            let data = blob[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn params_to_container(params: &NetworkParams, meta: BTreeMap<String, String>) -> Container {
    Container {
        meta,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, t)| Tensor {
                name,
                shape: t.shape().to_vec(),
                data: t.iter().copied().collect(),
            })
            .collect(),
    }
}

pub fn params_from_container(c: &Container) -> Result<NetworkParams> {
    let mut levels = Vec::new();
    while let Some(t) = c.get(&format!("b_u.{}", levels.len() + 1)) {
        levels.push(t.data.len());
    }
    let w_in = c
        .get("w_in.1")
        .ok_or_else(|| Error::Checkpoint("missing tensor w_in.1".into()))?;
    let b_a = c
        .get("b_a")
        .ok_or_else(|| Error::Checkpoint("missing tensor b_a".into()))?;
    if levels.is_empty() || w_in.shape.len() != 2 {
        return Err(Error::Checkpoint("malformed level tensors".into()));
    }
    let shape = NetworkShape {
        input: w_in.shape[1],
        levels,
        actions: b_a.data.len(),
    };
    let mut params = NetworkParams::zeros(&shape);
    for (name, mut dst) in params.tensors_mut() {
        let src = c
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if src.shape != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: shape {:?}, expected {:?}",
                src.shape,
                dst.shape()
            )));
        }
        for (d, s) in dst.iter_mut().zip(&src.data) {
            *d = *s;
        }
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &NetworkParams, meta: BTreeMap<String, String>) -> Result<()> {
    params_to_container(params, meta).write(path)
}

pub fn load_params(path: &Path) -> Result<(NetworkParams, BTreeMap<String, String>)> {
    let c = Container::read(path)?;
    let params = params_from_container(&c)?;
    Ok((params, c.meta))
}

/// Packs a matrix as a named tensor.
pub fn matrix_tensor(name: &str, m: &Array2<f64>) -> Tensor {
    Tensor {
        name: name.into(),
        shape: vec![m.nrows(), m.ncols()],
        data: m.iter().copied().collect(),
    }
}

pub fn vector_tensor(name: &str, v: &Array1<f64>) -> Tensor {
    Tensor {
        name: name.into(),
        shape: vec![v.len()],
        data: v.to_vec(),
    }
}
