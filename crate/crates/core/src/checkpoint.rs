//! Parameter checkpoints: a directory with `manifest.json` (config, digest,
//! step, parameter index) and `params.bin` (headered `f32` arrays).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::container::{decode_array, encode_array};
use crate::error::{HumofError, Result};
use crate::model::{Humof, InitScheme};
use crate::params::ParamStore;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub config_digest: String,
    pub config: RunConfig,
    pub step: usize,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, store: &ParamStore, step: usize) -> Result<()> {
    let mut blob = Vec::new();
    let mut params = Vec::with_capacity(store.len());
    for (_, name, value) in store.iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: [value.nrows(), value.ncols()],
            offset: blob.len() as u64,
        });
        encode_array(value, &mut blob);
    }
    let manifest = CheckpointManifest {
        schema_version: SCHEMA_VERSION,
        config_digest: config.digest(),
        config: config.clone(),
        step,
        params,
    };
    fs::create_dir_all(path)?;
    fs::write(path.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(path.join(PARAMS_FILE), blob)?;
    Ok(())
}

pub fn read_checkpoint_manifest(path: &Path) -> Result<CheckpointManifest> {
    let text = fs::read_to_string(path.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| HumofError::IncompatibleCheckpoint(format!("unreadable manifest: {e}")))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(HumofError::IncompatibleCheckpoint(format!(
            "schema version {}, expected {SCHEMA_VERSION}",
            manifest.schema_version
        )));
    }
    if manifest.config_digest != manifest.config.digest() {
        return Err(HumofError::IncompatibleCheckpoint(
            "stored config does not match its digest".into(),
        ));
    }
    Ok(manifest)
}

/// A restored model with its parameters.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub config: RunConfig,
    pub model: Humof,
    pub store: ParamStore,
    pub step: usize,
}

/// Loads a checkpoint. With `expected`, refuses unless its digest matches the
/// stored one.
pub fn load_checkpoint(path: &Path, expected: Option<&RunConfig>) -> Result<LoadedCheckpoint> {
    let manifest = read_checkpoint_manifest(path)?;
    if let Some(cfg) = expected {
        if cfg.digest() != manifest.config_digest {
            return Err(HumofError::IncompatibleCheckpoint(format!(
                "config digest {} differs from checkpoint digest {}",
                cfg.digest(),
                manifest.config_digest
            )));
        }
    }
    let (model, mut store) = Humof::new(&manifest.config.model, InitScheme::Standard, 0)?;
    if store.len() != manifest.params.len() {
        return Err(HumofError::IncompatibleCheckpoint(format!(
            "checkpoint holds {} parameters, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let blob = fs::read(path.join(PARAMS_FILE))?;
    for entry in &manifest.params {
        let id = store
            .id(&entry.name)
            .ok_or_else(|| HumofError::IncompatibleCheckpoint(format!("unknown parameter {}", entry.name)))?;
        let (value, _) = decode_array(&blob, entry.offset as usize)?;
        if value.dim() != store.get(id).dim() || [value.nrows(), value.ncols()] != entry.shape {
            return Err(HumofError::IncompatibleCheckpoint(format!(
                "parameter {} has shape {:?}, model expects {:?}",
                entry.name,
                value.dim(),
                store.get(id).dim()
            )));
        }
        store.set(id, value);
    }
    Ok(LoadedCheckpoint {
        config: manifest.config,
        model,
        store,
        step: manifest.step,
    })
}
