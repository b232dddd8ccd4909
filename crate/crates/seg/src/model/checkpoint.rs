//! Checkpoint files are safetensors containers. The string metadata block
//! carries the header:
//!
//! | key              | value                                         |
//! |------------------|-----------------------------------------------|
//! | `format`         | `octa-adapter` or `octa-base`                 |
//! | `format_version` | `1`                                           |
//! | `model_config`   | JSON [`ModelConfig`]                          |
//! | `model_digest`   | SHA-256 (hex) of the `model_config` JSON      |
//! | `lora_config`    | JSON [`LoraConfig`] (adapter files only)      |
//! | `base`           | JSON [`BaseSource`] (adapter files only)      |
//! | `task`           | JSON task, optional                           |
//!
//! Adapter files hold only trainable tensors: the LoRA `a`/`b` matrices, plus
//! the mask decoder when it was unfrozen. Tensors are little-endian `F32`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::Tensor;
use octa_core::SegTask;
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BaseSource, Group, LoraConfig, ModelConfig, SegModel};
use crate::error::{Error, Result};

pub const ADAPTER_FORMAT: &str = "octa-adapter";
pub const BASE_FORMAT: &str = "octa-base";
pub const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_digest(config: &ModelConfig) -> String {
    sha256_hex(config.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub model_digest: String,
    pub lora_config: LoraConfig,
    pub base: BaseSource,
    pub task: Option<SegTask>,
}

impl CheckpointMeta {
    fn describe(&self) -> String {
        format!(
            "model_config={} lora_config={} base={}",
            self.model_config,
            self.lora_config,
            serde_json::to_string(&self.base).unwrap_or_default()
        )
    }

    fn to_header(&self) -> Result<HashMap<String, String>> {
        let mut h = HashMap::new();
        h.insert("format".into(), ADAPTER_FORMAT.into());
        h.insert("format_version".into(), self.format_version.to_string());
        h.insert("model_config".into(), self.model_config.to_string());
        h.insert("model_digest".into(), self.model_digest.clone());
        h.insert("lora_config".into(), self.lora_config.to_string());
        h.insert("base".into(), serde_json::to_string(&self.base)?);
        if let Some(task) = &self.task {
            h.insert("task".into(), serde_json::to_string(task)?);
        }
        Ok(h)
    }

    fn from_header(h: &HashMap<String, String>) -> Result<Self> {
        let get = |k: &str| h.get(k).ok_or_else(|| Error::Checkpoint(format!("header lacks {k}")));
        if get("format")? != ADAPTER_FORMAT {
            return Err(Error::Checkpoint(format!("not an adapter checkpoint (format {})", get("format")?)));
        }
        let format_version: u32 = get("format_version")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad format_version".into()))?;
        if format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {format_version}")));
        }
        let model_config: ModelConfig = serde_json::from_str(get("model_config")?)?;
        let model_digest = get("model_digest")?.clone();
        if model_digest != config_digest(&model_config) {
            return Err(Error::Checkpoint("model_config digest mismatch".into()));
        }
        Ok(Self {
            format_version,
            model_config,
            model_digest,
            lora_config: serde_json::from_str(get("lora_config")?)?,
            base: serde_json::from_str(get("base")?)?,
            task: h.get("task").map(|t| serde_json::from_str(t)).transpose()?,
        })
    }
}

fn describe_model(model: &SegModel) -> String {
    format!(
        "model_config={} lora_config={} base={}",
        model.config(),
        model
            .lora_config()
            .map_or_else(|| "none".to_string(), ToString::to_string),
        serde_json::to_string(model.base_source()).unwrap_or_default()
    )
}

/// Rewrite the JSON header with sorted keys so equal contents give equal bytes
/// (the metadata map is otherwise emitted in hash order).
fn canonical(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = || Error::Checkpoint("truncated safetensors header".into());
    let len = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().expect("8 bytes")) as usize;
    let header = bytes.get(8..8 + len).ok_or_else(bad)?;
    let parsed: BTreeMap<String, serde_json::Value> = serde_json::from_slice(header)?;
    let sorted: BTreeMap<&str, serde_json::Value> = parsed
        .iter()
        .map(|(k, v)| {
            let v = match v.as_object() {
                Some(obj) => serde_json::to_value(obj.iter().collect::<BTreeMap<_, _>>())?,
                None => v.clone(),
            };
            Ok((k.as_str(), v))
        })
        .collect::<Result<_>>()?;
    let mut text = serde_json::to_vec(&sorted)?;
    text.resize(text.len().next_multiple_of(8), b' ');
    let mut out = Vec::with_capacity(8 + text.len() + bytes.len() - 8 - len);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + len..]);
    Ok(out)
}

fn serialize(data: Vec<(&str, &Tensor)>, header: HashMap<String, String>) -> Result<Vec<u8>> {
    canonical(safetensors::serialize(data, Some(header)).map_err(|e| Error::Checkpoint(e.to_string()))?)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn header_of(bytes: &[u8]) -> Result<HashMap<String, String>> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    meta.metadata()
        .clone()
        .ok_or_else(|| Error::Checkpoint("missing header".into()))
}

fn tensors_of(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = st
        .tensors()
        .into_iter()
        .map(|(name, view)| Ok((name, view.load(&candle_core::Device::Cpu)?)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Trainable state of an adapted model plus the header needed to rebuild it.
#[derive(Debug, Clone)]
pub struct AdapterCheckpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

impl AdapterCheckpoint {
    pub fn from_model(model: &SegModel, task: Option<SegTask>) -> Result<Self> {
        let lora = model.lora_config().ok_or(Error::NotAdapted)?.clone();
        let tensors = model
            .params()
            .entries()
            .iter()
            .filter(|e| e.is_trainable())
            .map(|e| Ok((e.name.clone(), e.tensor().detach().copy()?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                model_digest: config_digest(model.config()),
                model_config: model.config().clone(),
                lora_config: lora,
                base: model.base_source().clone(),
                task,
            },
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let data: Vec<(&str, &Tensor)> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        serialize(data, self.meta.to_header()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self {
            meta: CheckpointMeta::from_header(&header_of(bytes)?)?,
            tensors: tensors_of(bytes)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    /// Copy the stored tensors into `model`, which must carry the same model
    /// config, LoRA config and base weights.
    pub fn apply(&self, model: &mut SegModel) -> Result<()> {
        let compatible = model.config() == &self.meta.model_config
            && model.lora_config() == Some(&self.meta.lora_config)
            && model.base_source() == &self.meta.base;
        if !compatible {
            return Err(Error::IncompatibleCheckpoint {
                expected: describe_model(model),
                found: self.meta.describe(),
            });
        }
        let trainable: Vec<String> = model
            .params()
            .entries()
            .iter()
            .filter(|e| e.is_trainable())
            .map(|e| e.name.clone())
            .collect();
        if trainable.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model trains {}",
                self.tensors.len(),
                trainable.len()
            )));
        }
        for (name, tensor) in &self.tensors {
            if !trainable.contains(name) {
                return Err(Error::Checkpoint(format!("unexpected tensor {name}")));
            }
            model.params_mut().assign(name, tensor)?;
        }
        Ok(())
    }

    /// Rebuild the adapted model described by this checkpoint. A base file
    /// is required when the base weights were not randomly initialized.
    pub fn build_model(&self, base_file: Option<&Path>) -> Result<SegModel> {
        let mut model = match (&self.meta.base, base_file) {
            (BaseSource::Random { seed }, _) => SegModel::new(self.meta.model_config.clone(), *seed)?,
            (BaseSource::File { .. }, Some(path)) => load_base(path)?,
            (BaseSource::File { sha256 }, None) => {
                return Err(Error::Checkpoint(format!("needs base checkpoint with digest {sha256}")))
            }
        };
        model.inject_lora(&self.meta.lora_config)?;
        self.apply(&mut model)?;
        Ok(model)
    }
}

pub fn save_adapter(model: &SegModel, path: &Path) -> Result<()> {
    AdapterCheckpoint::from_model(model, None)?.save(path)
}

pub fn load_adapter(model: &mut SegModel, path: &Path) -> Result<()> {
    AdapterCheckpoint::load(path)?.apply(model)
}

/// Serialize every non-adapter parameter.
pub fn base_bytes(model: &SegModel) -> Result<Vec<u8>> {
    let data: Vec<(&str, &Tensor)> = model
        .params()
        .entries()
        .iter()
        .filter(|e| e.group != Group::Adapter)
        .map(|e| (e.name.as_str(), e.tensor()))
        .collect();
    let mut header = HashMap::new();
    header.insert("format".to_string(), BASE_FORMAT.to_string());
    header.insert("format_version".to_string(), FORMAT_VERSION.to_string());
    header.insert("model_config".to_string(), model.config().to_string());
    header.insert("model_digest".to_string(), config_digest(model.config()));
    serialize(data, header)
}

pub fn save_base(model: &SegModel, path: &Path) -> Result<()> {
    std::fs::write(path, base_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_base(path: &Path) -> Result<SegModel> {
    let bytes = read_file(path)?;
    let header = header_of(&bytes)?;
    if header.get("format").map(String::as_str) != Some(BASE_FORMAT) {
        return Err(Error::Checkpoint(format!("{} is not a base checkpoint", path.display())));
    }
    let config: ModelConfig = serde_json::from_str(
        header
            .get("model_config")
            .ok_or_else(|| Error::Checkpoint("header lacks model_config".into()))?,
    )?;
    let mut model = SegModel::new(config, 0)?;
    let tensors = tensors_of(&bytes)?;
    let expected = model.params().entries().len();
    if tensors.len() != expected {
        return Err(Error::Checkpoint(format!("base holds {} tensors, model has {expected}", tensors.len())));
    }
    for (name, tensor) in &tensors {
        model.params_mut().assign(name, tensor)?;
    }
    model.set_base_source(BaseSource::File {
        sha256: sha256_hex(&bytes),
    });
    Ok(model)
}
