//! Checkpoints: a JSON manifest plus one raw little-endian f64 file per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, Parameterized};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub kind: String,
    pub config: AdamConfig,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Architecture descriptor supplied by the model owner.
    pub header: serde_json::Value,
    pub optimizer: Option<OptimizerInfo>,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint<M: Parameterized + ?Sized>(
    dir: &Path,
    model: &M,
    header: serde_json::Value,
    optimizer: Option<&Adam>,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, p) in model.named_params() {
        let file = format!("{name}.f64");
        let bytes: Vec<u8> = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes)?;
        entries.push(ParamEntry {
            name,
            shape: p.shape.clone(),
            file,
        });
    }
    let manifest = Manifest {
        header,
        optimizer: optimizer.map(|o| OptimizerInfo {
            kind: "adam".into(),
            config: o.config,
            steps: o.steps(),
        }),
        params: entries,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Reads parameter values into `model`, which must already have matching shapes.
pub fn load_checkpoint<M: Parameterized + ?Sized>(dir: &Path, model: &mut M) -> Result<Manifest> {
    let ckpt_err = |e: std::io::Error| Error::Checkpoint(format!("{}: {e}", dir.display()));
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(ckpt_err)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let names: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.shape.clone()))
        .collect();
    if names.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} parameters, checkpoint has {}",
            names.len(),
            manifest.params.len()
        )));
    }
    for ((name, shape), (entry, p)) in names
        .iter()
        .zip(manifest.params.iter().zip(model.params_mut()))
    {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "parameter {} {:?} does not match checkpoint entry {} {:?}",
                name, shape, entry.name, entry.shape
            )));
        }
        let bytes = fs::read(dir.join(&entry.file)).map_err(ckpt_err)?;
        if bytes.len() != p.len() * 8 {
            return Err(Error::Checkpoint(format!(
                "{}: expected {} bytes, found {}",
                entry.file,
                p.len() * 8,
                bytes.len()
            )));
        }
        for (v, chunk) in p.value.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        p.zero_grad();
    }
    Ok(manifest)
}
