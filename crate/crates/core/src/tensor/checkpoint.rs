//! Parameter checkpoints.
//!
//! A checkpoint is a JSON document
//!
//! ```json
//! {"format": "multisense-params", "version": 1,
//!  "params": {"lm.out.w": {"shape": [16, 40], "data": [0.1, ...]}, ...}}
//! ```
//!
//! Parameters are written in name order and values as `f64`, so saving the
//! same store twice produces identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "multisense-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    params: BTreeMap<String, Entry>,
}

pub fn params_to_json<T: Scalar>(store: &ParamStore<T>) -> Result<String> {
    let mut params = BTreeMap::new();
    for (name, t) in store.iter() {
        if !t.all_finite() {
            return Err(Error::Checkpoint(format!("parameter `{name}` has non-finite values")));
        }
        params.insert(
            name.to_string(),
            Entry {
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|x| x.as_f64()).collect(),
            },
        );
    }
    let doc = Document {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        params,
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn params_from_json<T: Scalar>(text: &str) -> Result<ParamStore<T>> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format `{}`", doc.format)));
    }
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", doc.version)));
    }
    let mut store = ParamStore::new();
    for (name, e) in doc.params {
        let t = Tensor::new(e.shape, e.data.into_iter().map(T::lit).collect())
            .map_err(|err| Error::Checkpoint(format!("`{name}`: {err}")))?;
        store.insert(name, t)?;
    }
    Ok(store)
}

pub fn save_params<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, params_to_json(store)?).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    params_from_json(&text)
}

impl<T: Scalar> ParamStore<T> {
    /// Overwrites every parameter with the value stored in `other`. Names and
    /// shapes must match exactly.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, checkpoint has {}",
                self.len(),
                other.len()
            )));
        }
        for (name, p) in self.iter_mut() {
            let src = other
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if src.shape() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, checkpoint {:?}",
                    p.shape(),
                    src.shape()
                )));
            }
            p.data_mut().copy_from_slice(src.data());
            p.zero_grad();
        }
        Ok(())
    }
}
