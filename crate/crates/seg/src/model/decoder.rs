use candle_core::Tensor;

use super::config::ModelConfig;
use super::encoder::ImageEmbedding;
use super::layers::{pixel_shuffle_last, Activation, Attention, LayerNorm, Linear, Mlp};
use super::params::{Group, Init, ParamId, Params};
use crate::error::Result;

/// Decoder block attending both ways between output/prompt tokens and image
/// tokens.
#[derive(Debug, Clone)]
pub struct TwoWayBlock {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub token_to_image: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub norm3: LayerNorm,
    pub image_to_token: Attention,
    pub norm4: LayerNorm,
    skip_first_pe: bool,
}

impl TwoWayBlock {
    fn new(p: &mut Params, init: &Init, name: &str, dim: usize, heads: usize, skip_first_pe: bool) -> Result<Self> {
        let g = Group::Decoder;
        Ok(Self {
            self_attn: Attention::new(p, init, &format!("{name}.self_attn"), g, dim, heads)?,
            norm1: LayerNorm::new(p, init, &format!("{name}.norm1"), g, dim)?,
            token_to_image: Attention::new(p, init, &format!("{name}.token_to_image"), g, dim, heads)?,
            norm2: LayerNorm::new(p, init, &format!("{name}.norm2"), g, dim)?,
            mlp: Mlp::new(p, init, &format!("{name}.mlp"), g, &[dim, 4 * dim, dim], Activation::Relu)?,
            norm3: LayerNorm::new(p, init, &format!("{name}.norm3"), g, dim)?,
            image_to_token: Attention::new(p, init, &format!("{name}.image_to_token"), g, dim, heads)?,
            norm4: LayerNorm::new(p, init, &format!("{name}.norm4"), g, dim)?,
            skip_first_pe,
        })
    }

    fn forward(&self, p: &Params, queries: &Tensor, keys: &Tensor, query_pe: &Tensor, key_pe: &Tensor) -> Result<(Tensor, Tensor)> {
        let queries = if self.skip_first_pe {
            self.self_attn.forward(p, queries, queries, queries)?
        } else {
            let q = (queries + query_pe)?;
            (queries + self.self_attn.forward(p, &q, &q, queries)?)?
        };
        let queries = self.norm1.forward(p, &queries)?;

        let q = (&queries + query_pe)?;
        let k = keys.broadcast_add(key_pe)?;
        let queries = self.norm2.forward(p, &(&queries + self.token_to_image.forward(p, &q, &k, keys)?)?)?;
        let queries = self.norm3.forward(p, &(&queries + self.mlp.forward(p, &queries)?)?)?;

        let q = (&queries + query_pe)?;
        let keys = self.norm4.forward(p, &(keys + self.image_to_token.forward(p, &k, &q, &queries)?)?)?;
        Ok((queries, keys))
    }
}

/// Candidate masks and their confidences for a batch.
#[derive(Debug, Clone)]
pub struct MaskPrediction {
    /// `(B, k, S, S)`
    pub logits: Tensor,
    /// `(B, k)` in `[0, 1]`
    pub confidences: Tensor,
}

#[derive(Debug, Clone)]
pub struct MaskDecoder {
    pub iou_token: ParamId,
    pub mask_tokens: ParamId,
    pub blocks: Vec<TwoWayBlock>,
    pub final_attn: Attention,
    pub final_norm: LayerNorm,
    pub up_mid: Linear,
    pub mid_skip: Linear,
    pub mid_norm: LayerNorm,
    pub up_fine: Linear,
    pub fine_skip: Linear,
    pub hyper: Vec<Mlp>,
    pub iou_head: Mlp,
    config: ModelConfig,
}

impl MaskDecoder {
    pub fn new(p: &mut Params, init: &Init, config: &ModelConfig) -> Result<Self> {
        let g = Group::Decoder;
        let d = config.decoder_dim;
        let k = config.mask_count;
        let (c1, c0) = (config.mid_channels, config.stem_channels);
        let r1 = config.patch_size / 4;
        Ok(Self {
            iou_token: p.add("decoder.iou_token", g, init.normal("decoder.iou_token", &[1, d], 1.0)?),
            mask_tokens: p.add("decoder.mask_tokens", g, init.normal("decoder.mask_tokens", &[k, d], 1.0)?),
            blocks: (0..config.decoder_depth)
                .map(|i| TwoWayBlock::new(p, init, &format!("decoder.blocks.{i}"), d, config.decoder_heads, i == 0))
                .collect::<Result<_>>()?,
            final_attn: Attention::new(p, init, "decoder.final_attn", g, d, config.decoder_heads)?,
            final_norm: LayerNorm::new(p, init, "decoder.final_norm", g, d)?,
            up_mid: Linear::new(p, init, "decoder.up_mid", g, d, r1 * r1 * c1)?,
            mid_skip: Linear::new(p, init, "decoder.mid_skip", g, c1, c1)?,
            mid_norm: LayerNorm::new(p, init, "decoder.mid_norm", g, c1)?,
            up_fine: Linear::new(p, init, "decoder.up_fine", g, c1, 16 * c0)?,
            fine_skip: Linear::new(p, init, "decoder.fine_skip", g, c0, c0)?,
            hyper: (0..k)
                .map(|i| Mlp::new(p, init, &format!("decoder.hyper.{i}"), g, &[d, d, d, c0], Activation::Relu))
                .collect::<Result<_>>()?,
            iou_head: Mlp::new(p, init, "decoder.iou_head", g, &[d, d, d, k], Activation::Relu)?,
            config: config.clone(),
        })
    }

    /// `prompts: (B, P, dim)` or `None` for an unprompted decode;
    /// `image_pe: (tokens, dim)`; `no_mask: (dim,)`.
    pub fn forward(
        &self,
        p: &Params,
        embedding: &ImageEmbedding,
        prompts: Option<&Tensor>,
        image_pe: &Tensor,
        no_mask: &Tensor,
    ) -> Result<MaskPrediction> {
        let cfg = &self.config;
        let b = embedding.batch_size();
        let d = cfg.decoder_dim;
        let k = cfg.mask_count;
        let output_tokens = Tensor::cat(&[p.get(self.iou_token), p.get(self.mask_tokens)], 0)?
            .unsqueeze(0)?
            .broadcast_as((b, k + 1, d))?
            .contiguous()?;
        let tokens = match prompts {
            Some(prompts) => Tensor::cat(&[&output_tokens, prompts], 1)?,
            None => output_tokens,
        };

        let mut keys = embedding.tokens.broadcast_add(no_mask)?;
        let key_pe = image_pe.unsqueeze(0)?;
        let mut queries = tokens.clone();
        for block in &self.blocks {
            (queries, keys) = block.forward(p, &queries, &keys, &tokens, &key_pe)?;
        }
        let q = (&queries + &tokens)?;
        let kp = keys.broadcast_add(&key_pe)?;
        let queries = self.final_norm.forward(p, &(&queries + self.final_attn.forward(p, &q, &kp, &keys)?)?)?;

        // upscale image tokens to full resolution, merging the skip features
        let g = cfg.grid_side();
        let s = cfg.input_side;
        let x = self.up_mid.forward(p, &keys.reshape((b, g, g, d))?)?;
        let x = pixel_shuffle_last(&x, cfg.patch_size / 4)?;
        let x = (x + self.mid_skip.forward(p, &embedding.mid)?)?;
        let x = self.mid_norm.forward(p, &x)?.gelu()?;
        let x = pixel_shuffle_last(&self.up_fine.forward(p, &x)?, 4)?;
        let fine = embedding.fine.permute((0, 2, 3, 1))?.contiguous()?;
        let x = (x + self.fine_skip.forward(p, &fine)?)?.gelu()?;
        let features = x.reshape((b, s * s, cfg.stem_channels))?;

        let hyper = (0..k)
            .map(|i| self.hyper[i].forward(p, &queries.narrow(1, 1 + i, 1)?))
            .collect::<Result<Vec<_>>>()?;
        let hyper = Tensor::cat(&hyper, 1)?;
        let logits = hyper
            .matmul(&features.t()?.contiguous()?)?
            .reshape((b, k, s, s))?;
        let confidences = candle_nn::ops::sigmoid(
            &self.iou_head.forward(p, &queries.narrow(1, 0, 1)?)?.squeeze(1)?,
        )?;
        Ok(MaskPrediction { logits, confidences })
    }
}
