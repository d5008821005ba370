use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::RunConfig;

pub const MANIFEST: &str = "checkpoint.json";
const FORMAT: &str = "voxgen-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub step: usize,
    pub adam_step: u64,
    pub config: RunConfig,
    pub params: Vec<ParamEntry>,
}

fn corrupt(m: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(m.into())
}

fn tensor_file(kind: &str, i: usize) -> String {
    format!("{kind}-{i:04}.vgt")
}

/// Writes parameters, optimizer moments and the run config into `dir`.
pub fn save<T: Scalar>(
    dir: &Path,
    cfg: &RunConfig,
    step: usize,
    store: &ParamStore<T>,
    adam: &AdamState<T>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(store.len());
    for (i, (name, p)) in store.iter().enumerate() {
        p.value.save(dir.join(tensor_file("param", i)))?;
        params.push(ParamEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
        });
    }
    for (i, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
        m.save(dir.join(tensor_file("adam-m", i)))?;
        v.save(dir.join(tensor_file("adam-v", i)))?;
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        step,
        adam_step: adam.step,
        config: cfg.clone(),
        params,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| corrupt(format!("{}: {e}", dir.display())))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(corrupt(format!("unknown format `{}`", m.format)));
    }
    Ok(m)
}

fn load_tensor<T: Scalar>(dir: &Path, file: String, shape: &[usize]) -> Result<Tensor<T>> {
    let t = Tensor::<T>::load(dir.join(&file)).map_err(|e| corrupt(format!("{file}: {e}")))?;
    if t.shape() != shape {
        return Err(corrupt(format!(
            "{file} has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

/// Restores values into a store built from the same config and returns the
/// optimizer state and step. Any name, shape or count mismatch is reported
/// as corruption.
pub fn restore<T: Scalar>(
    dir: &Path,
    m: &CheckpointManifest,
    store: &mut ParamStore<T>,
) -> Result<AdamState<T>> {
    if m.params.len() != store.len() {
        return Err(corrupt(format!(
            "{} parameters, model has {}",
            m.params.len(),
            store.len()
        )));
    }
    for (i, ((name, p), e)) in store.iter_mut().zip(&m.params).enumerate() {
        if name != e.name || p.value.shape() != e.shape.as_slice() {
            return Err(corrupt(format!(
                "parameter {i} is `{}` {:?}, model has `{name}` {:?}",
                e.name,
                e.shape,
                p.value.shape()
            )));
        }
        p.value = load_tensor(dir, tensor_file("param", i), &e.shape)?;
        p.grad = None;
    }
    let mut adam = AdamState::new(m.config.optimizer);
    adam.step = m.adam_step;
    if m.adam_step > 0 {
        for (i, e) in m.params.iter().enumerate() {
            adam.m
                .push(load_tensor(dir, tensor_file("adam-m", i), &e.shape)?);
            adam.v
                .push(load_tensor(dir, tensor_file("adam-v", i), &e.shape)?);
        }
    }
    Ok(adam)
}
