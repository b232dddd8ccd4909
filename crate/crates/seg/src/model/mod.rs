//! Promptable segmentation model: patch-transformer image encoder, point
//! prompt encoder, two-way mask decoder with a confidence head, and LoRA
//! adapters on the encoder attention projections.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod layers;
pub mod params;
pub mod prompt;

use candle_core::{DType, Device, Tensor};
use octa_core::standardize::StandardizedInput;
use octa_core::PromptSet;
use serde::{Deserialize, Serialize};

pub use checkpoint::{AdapterCheckpoint, CheckpointMeta};
pub use config::{LoraConfig, ModelConfig, Projection, ScalePreset};
pub use decoder::{MaskDecoder, MaskPrediction};
pub use encoder::{ImageEmbedding, ImageEncoder};
pub use params::{Group, ParamId, Params};
pub use prompt::PromptEncoder;

use crate::error::{Error, Result};
use layers::LoraBranch;
use params::Init;

/// Where the frozen base weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseSource {
    /// Deterministic random initialization.
    Random { seed: u64 },
    /// Loaded from a base checkpoint with this SHA-256 digest.
    File { sha256: String },
}

#[derive(Debug, Clone)]
pub struct SegModel {
    config: ModelConfig,
    params: Params,
    encoder: ImageEncoder,
    prompt: PromptEncoder,
    decoder: MaskDecoder,
    image_pe: Tensor,
    lora: Option<LoraConfig>,
    base: BaseSource,
}

impl SegModel {
    /// Randomly initialized base model; every parameter starts frozen.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let config = config.validated()?;
        let device = Device::Cpu;
        let init = Init::new(seed, device.clone());
        let mut params = Params::new(device);
        let encoder = ImageEncoder::new(&mut params, &init, &config)?;
        let prompt = PromptEncoder::new(&mut params, &init, config.input_side, config.decoder_dim)?;
        let decoder = MaskDecoder::new(&mut params, &init, &config)?;
        let image_pe = prompt.dense_pe(&params, config.grid_side())?;
        Ok(Self {
            config,
            params,
            encoder,
            prompt,
            decoder,
            image_pe,
            lora: None,
            base: BaseSource::Random { seed },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn lora_config(&self) -> Option<&LoraConfig> {
        self.lora.as_ref()
    }

    pub fn base_source(&self) -> &BaseSource {
        &self.base
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn prompt_encoder(&self) -> &PromptEncoder {
        &self.prompt
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Install LoRA branches on the configured encoder projections. Base
    /// weights stay frozen; the mask decoder becomes trainable only when
    /// `unfreeze_decoder` is set.
    pub fn inject_lora(&mut self, lora: &LoraConfig) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::AlreadyAdapted);
        }
        let lora = lora.clone().validated()?;
        let init = Init::new(params::mix_seed(&self.base), self.device().clone());
        let depth = self.encoder.blocks.len();
        let first = if lora.every_block { 0 } else { depth - 1 };
        for (i, block) in self.encoder.blocks.iter_mut().enumerate().skip(first) {
            for (proj, linear) in Projection::ALL.iter().zip(block.attn.projections_mut()) {
                if !lora.targets.contains(proj) {
                    continue;
                }
                let name = format!("adapter.blocks.{i}.{}", proj.as_str());
                let a = init.uniform(&format!("{name}.a"), &[lora.rank, linear.d_in], 1.0 / (linear.d_in as f64).sqrt())?;
                let b = init.zeros(&[linear.d_out, lora.rank])?;
                let a = self.params.add(format!("{name}.a"), Group::Adapter, a);
                let b = self.params.add(format!("{name}.b"), Group::Adapter, b);
                self.params.set_trainable(a, true)?;
                self.params.set_trainable(b, true)?;
                linear.lora = Some(LoraBranch {
                    a,
                    b,
                    scale: lora.scale(),
                });
            }
        }
        if lora.unfreeze_decoder {
            self.params.set_group_trainable(Group::Decoder, true)?;
        }
        self.lora = Some(lora);
        Ok(())
    }

    /// Images as a `(B, 3, S, S)` tensor.
    pub fn encode(&self, images: &Tensor) -> Result<ImageEmbedding> {
        let dims = images.dims();
        let side = self.config.input_side;
        if dims.len() != 4 || dims[1] != 3 || dims[2] != side || dims[3] != side {
            let got = dims.get(2).copied().unwrap_or(0);
            return Err(Error::InputSide { expected: side, got });
        }
        self.encoder.forward(&self.params, images)
    }

    pub fn encode_image(&self, input: &StandardizedInput) -> Result<ImageEmbedding> {
        let side = input.image.width();
        if side != self.config.input_side || input.image.height() != side {
            return Err(Error::InputSide {
                expected: self.config.input_side,
                got: side,
            });
        }
        self.encode(&images_tensor(std::slice::from_ref(input), self.device())?)
    }

    pub fn encode_prompts(&self, sets: &[PromptSet]) -> Result<Option<Tensor>> {
        self.prompt.encode(&self.params, sets)
    }

    pub fn decode(&self, embedding: &ImageEmbedding, prompts: Option<&Tensor>) -> Result<MaskPrediction> {
        if embedding.tokens.dims()[1] != self.config.token_count() {
            return Err(Error::InputSide {
                expected: self.config.input_side,
                got: embedding.tokens.dims()[1],
            });
        }
        let no_mask = self.params.get(self.prompt.no_mask);
        self.decoder
            .forward(&self.params, embedding, prompts, &self.image_pe, no_mask)
    }

    pub fn forward(&self, images: &Tensor, prompts: &[PromptSet]) -> Result<MaskPrediction> {
        let embedding = self.encode(images)?;
        let prompts = self.encode_prompts(prompts)?;
        self.decode(&embedding, prompts.as_ref())
    }

    /// Copies of every frozen parameter, by name.
    pub fn frozen_snapshot(&self) -> Result<Vec<(String, Vec<f32>)>> {
        self.params
            .entries()
            .iter()
            .filter(|e| !e.is_trainable())
            .map(|e| Ok((e.name.clone(), e.tensor().flatten_all()?.to_vec1::<f32>()?)))
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Scalars in the base model (everything except adapters).
    pub fn base_count(&self) -> usize {
        self.params
            .entries()
            .iter()
            .filter(|e| e.group != Group::Adapter)
            .map(|e| e.tensor().elem_count())
            .sum()
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub(crate) fn set_base_source(&mut self, base: BaseSource) {
        self.base = base;
    }
}

/// Stack standardized inputs into a `(B, 3, S, S)` tensor.
pub fn images_tensor(inputs: &[StandardizedInput], device: &Device) -> Result<Tensor> {
    let side = inputs.first().map_or(0, |i| i.image.width());
    let mut data = Vec::with_capacity(inputs.len() * 3 * side * side);
    for input in inputs {
        data.extend(input.image.to_chw());
    }
    Ok(Tensor::from_vec(data, (inputs.len(), 3, side, side), device)?.to_dtype(DType::F32)?)
}

/// Index of the highest confidence; ties go to the lowest index.
pub fn select_best(confidences: &[f32]) -> usize {
    let mut best = 0;
    for (i, &c) in confidences.iter().enumerate() {
        if c > confidences[best] {
            best = i;
        }
    }
    best
}

/// Per-sample best mask logits `(B, S, S)` and confidences.
pub fn select_best_batch(pred: &MaskPrediction) -> Result<(Tensor, Vec<usize>, Vec<f32>)> {
    let conf = pred.confidences.to_vec2::<f32>()?;
    let mut picked = Vec::with_capacity(conf.len());
    let mut indices = Vec::with_capacity(conf.len());
    let mut values = Vec::with_capacity(conf.len());
    for (b, row) in conf.iter().enumerate() {
        let i = select_best(row);
        picked.push(pred.logits.narrow(0, b, 1)?.narrow(1, i, 1)?.squeeze(1)?);
        indices.push(i);
        values.push(row[i]);
    }
    Ok((Tensor::cat(&picked, 0)?, indices, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_with_lowest_index_ties() {
        assert_eq!(select_best(&[0.2, 0.9, 0.5]), 1);
        assert_eq!(select_best(&[0.7, 0.7]), 0);
        assert_eq!(select_best(&[0.3]), 0);
    }
}
