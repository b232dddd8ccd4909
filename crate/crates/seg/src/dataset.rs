//! On-disk dataset layout:
//!
//! ```text
//! <root>/<fov>/projections/<layer>/<id>.png   8-bit grayscale
//! <root>/<fov>/labels/<task>/<id>.png         nonzero = foreground
//! ```
//!
//! `<fov>` is `3M` or `6M`; `<task>` is one of `rv`, `faz`, `capillary`,
//! `artery`, `vein`. A task directory may be absent, but when present it must
//! hold a label for every id.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use octa_core::sample::DEFAULT_LAYERS;
use octa_core::{Fov, OctaSample, TaskName};

use crate::error::{Error, Result};
use crate::imageio;

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Require the image side implied by the field of view (304 or 400).
    pub strict_fov_side: bool,
}

fn fov_dir(root: &Path, fov: Fov) -> PathBuf {
    root.join(fov.as_str())
}

fn subdirs(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn png_ids(path: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = p.file_stem() {
                out.insert(stem.to_string_lossy().into_owned());
            }
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn corrupt(id: &str, reason: impl Into<String>) -> Error {
    Error::CorruptSample {
        id: id.to_string(),
        reason: reason.into(),
    }
}

/// Known layers first in their canonical order, then the rest by name.
fn order_layers(mut layers: Vec<String>) -> Vec<String> {
    layers.sort_by_key(|l| {
        let rank = DEFAULT_LAYERS.iter().position(|d| d == l).unwrap_or(usize::MAX);
        (rank, l.clone())
    });
    layers
}

pub fn load_dataset(root: &Path, fov: Fov) -> Result<Vec<OctaSample>> {
    load_dataset_with(root, fov, LoadOptions::default())
}

pub fn load_dataset_with(root: &Path, fov: Fov, options: LoadOptions) -> Result<Vec<OctaSample>> {
    let base = fov_dir(root, fov);
    let proj_dir = base.join("projections");
    if !proj_dir.is_dir() {
        return Err(Error::DatasetNotFound(proj_dir));
    }
    let layers = order_layers(subdirs(&proj_dir)?);
    let mut ids = BTreeSet::new();
    let mut per_layer = Vec::with_capacity(layers.len());
    for layer in &layers {
        let found = png_ids(&proj_dir.join(layer))?;
        ids.extend(found.iter().cloned());
        per_layer.push(found);
    }
    if ids.is_empty() {
        return Err(Error::DatasetNotFound(proj_dir));
    }

    let label_dir = base.join("labels");
    let mut tasks = Vec::new();
    if label_dir.is_dir() {
        for name in subdirs(&label_dir)? {
            let task: TaskName = name.parse()?;
            tasks.push((task, png_ids(&label_dir.join(&name))?, name));
        }
    }

    let mut samples = Vec::with_capacity(ids.len());
    for id in &ids {
        let mut projections = Vec::with_capacity(layers.len());
        for (layer, present) in layers.iter().zip(&per_layer) {
            if !present.contains(id) {
                return Err(corrupt(id, format!("missing projection {layer}")));
            }
            let bytes = read(&proj_dir.join(layer).join(format!("{id}.png")))?;
            let decoded = imageio::decode_png(&bytes).map_err(|e| corrupt(id, e.to_string()))?;
            projections.push((layer.clone(), decoded.planes.into_iter().next().expect("one plane")));
        }
        let mut labels = BTreeMap::new();
        for (task, present, dir) in &tasks {
            if !present.contains(id) {
                return Err(corrupt(id, format!("missing {task} label")));
            }
            let bytes = read(&label_dir.join(dir).join(format!("{id}.png")))?;
            let mask = imageio::decode_mask(&bytes).map_err(|e| corrupt(id, e.to_string()))?;
            labels.insert(*task, mask);
        }
        let sample = OctaSample::new(id.clone(), fov, projections, labels)
            .map_err(|e| corrupt(id, e.to_string()))?;
        if options.strict_fov_side && (sample.width() != fov.side() || sample.height() != fov.side()) {
            return Err(corrupt(
                id,
                format!(
                    "{}x{} image in the {fov} subset, expected {s}x{s}",
                    sample.width(),
                    sample.height(),
                    s = fov.side()
                ),
            ));
        }
        samples.push(sample);
    }
    Ok(samples)
}

/// Write samples in the layout read by [`load_dataset`].
pub fn write_dataset(root: &Path, samples: &[OctaSample]) -> Result<()> {
    for sample in samples {
        let base = fov_dir(root, sample.fov);
        for (layer, plane) in sample.projections() {
            write_png(&base.join("projections").join(layer), &sample.sample_id, &imageio::encode_gray8(plane)?)?;
        }
        for (task, mask) in sample.labels() {
            write_png(&base.join("labels").join(task.as_str()), &sample.sample_id, &imageio::encode_mask8(mask)?)?;
        }
    }
    Ok(())
}

fn write_png(dir: &Path, id: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{id}.png"));
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

