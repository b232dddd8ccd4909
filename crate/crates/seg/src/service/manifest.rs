//! Serving directory layout: `manifest.json` plus one adapter file per task
//! (and an optional shared base file).

use std::fs;
use std::path::Path;

use octa_core::SegTask;
use serde::{Deserialize, Serialize};

use super::TaskModel;
use crate::model::checkpoint::sha256_hex;
use crate::model::AdapterCheckpoint;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task: SegTask,
    /// Adapter file, relative to the serving directory.
    pub file: String,
    /// Base checkpoint, relative to the serving directory; absent when the
    /// base is randomly initialized from the seed in the adapter header.
    pub base_file: Option<String>,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub models: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Copy an adapter (and optional base file) into `dir` and register it in the
/// manifest, replacing any earlier entry for the same task.
pub fn export(dir: &Path, checkpoint: &AdapterCheckpoint, base_file: Option<&Path>) -> Result<ManifestEntry> {
    let task = checkpoint
        .meta
        .task
        .ok_or_else(|| Error::Checkpoint("adapter header names no task".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = checkpoint.to_bytes()?;
    let file = format!("{}_{}.safetensors", task.name(), task.mode());
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    let base_file = match base_file {
        Some(src) => {
            let name = src
                .file_name()
                .ok_or_else(|| Error::Config(format!("bad base path {}", src.display())))?
                .to_string_lossy()
                .into_owned();
            let dst = dir.join(&name);
            if dst != src {
                fs::copy(src, &dst).map_err(|e| Error::io(&dst, e))?;
            }
            Some(name)
        }
        None => None,
    };
    let entry = ManifestEntry {
        task,
        file,
        base_file,
        sha256: sha256_hex(&bytes),
    };
    let mut manifest = Manifest::read(dir)?;
    manifest.models.retain(|m| m.task != task);
    manifest.models.push(entry.clone());
    manifest.models.sort_by_key(|m| m.task);
    manifest.write(dir)?;
    Ok(entry)
}

pub(super) fn load_models(dir: &Path) -> Result<Vec<TaskModel>> {
    Manifest::read(dir)?
        .models
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::Checkpoint(format!("{} does not match its manifest digest", entry.file)));
            }
            let checkpoint = AdapterCheckpoint::from_bytes(&bytes)?;
            let base = entry.base_file.as_ref().map(|b| dir.join(b));
            let model = checkpoint.build_model(base.as_deref())?;
            Ok(TaskModel { entry, model })
        })
        .collect()
}
