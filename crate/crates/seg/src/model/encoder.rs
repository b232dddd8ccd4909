use candle_core::Tensor;

use super::config::ModelConfig;
use super::layers::{Activation, Attention, LayerNorm, Linear, Mlp};
use super::params::{Group, Init, ParamId, Params};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

/// Patch transformer plus two shallow high-resolution feature paths.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub patch: Linear,
    pub pos: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub neck: Linear,
    pub neck_norm: LayerNorm,
    /// 3x3 convolution at full resolution.
    pub stem_weight: ParamId,
    pub stem_bias: ParamId,
    /// 4x4 patch projection at quarter resolution.
    pub mid: Linear,
    config: ModelConfig,
}

/// Cached encoder output for a batch of images.
#[derive(Debug, Clone)]
pub struct ImageEmbedding {
    /// `(B, tokens, decoder_dim)`, tokens in raster order of the patch grid.
    pub tokens: Tensor,
    /// `(B, S/4, S/4, mid_channels)`
    pub mid: Tensor,
    /// `(B, stem_channels, S, S)`
    pub fine: Tensor,
}

impl ImageEmbedding {
    pub fn batch_size(&self) -> usize {
        self.tokens.dims()[0]
    }

    pub fn get(&self, index: usize) -> Result<ImageEmbedding> {
        Ok(ImageEmbedding {
            tokens: self.tokens.narrow(0, index, 1)?,
            mid: self.mid.narrow(0, index, 1)?,
            fine: self.fine.narrow(0, index, 1)?,
        })
    }
}

/// `(B, C, S, S)` to `(B, (S/p)², C·p·p)` in raster patch order.
fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (gh, gw) = (h / p, w / p);
    Ok(x
        .reshape(vec![b, c, gh, p, gw, p])?
        .permute(vec![0, 2, 4, 1, 3, 5])?
        .contiguous()?
        .reshape((b, gh * gw, c * p * p))?)
}

impl ImageEncoder {
    pub fn new(p: &mut Params, init: &Init, config: &ModelConfig) -> Result<Self> {
        let g = Group::Encoder;
        let d = config.embed_dim;
        let patch = Linear::new(p, init, "encoder.patch", g, 3 * config.patch_size * config.patch_size, d)?;
        let pos = p.add("encoder.pos", g, init.normal("encoder.pos", &[config.token_count(), d], 0.02)?);
        let blocks = (0..config.encoder_depth)
            .map(|i| {
                let name = format!("encoder.blocks.{i}");
                Ok(EncoderBlock {
                    norm1: LayerNorm::new(p, init, &format!("{name}.norm1"), g, d)?,
                    attn: Attention::new(p, init, &format!("{name}.attn"), g, d, config.num_heads)?,
                    norm2: LayerNorm::new(p, init, &format!("{name}.norm2"), g, d)?,
                    mlp: Mlp::new(p, init, &format!("{name}.mlp"), g, &[d, d * config.mlp_ratio, d], Activation::Gelu)?,
                })
            })
            .collect::<Result<_>>()?;
        let neck = Linear::new(p, init, "encoder.neck", g, d, config.decoder_dim)?;
        let neck_norm = LayerNorm::new(p, init, "encoder.neck_norm", g, config.decoder_dim)?;
        let c0 = config.stem_channels;
        let stem_weight = p.add("encoder.stem.weight", g, init.uniform("encoder.stem.weight", &[c0, 3, 3, 3], 1.0 / 27f64.sqrt())?);
        let stem_bias = p.add("encoder.stem.bias", g, init.uniform("encoder.stem.bias", &[c0], 0.1)?);
        let mid = Linear::new(p, init, "encoder.mid", g, 48, config.mid_channels)?;
        Ok(Self {
            patch,
            pos,
            blocks,
            neck,
            neck_norm,
            stem_weight,
            stem_bias,
            mid,
            config: config.clone(),
        })
    }

    /// `images: (B, 3, S, S)`.
    pub fn forward(&self, p: &Params, images: &Tensor) -> Result<ImageEmbedding> {
        let s = self.config.input_side;
        let mut x = self
            .patch
            .forward(p, &patchify(images, self.config.patch_size)?)?
            .broadcast_add(p.get(self.pos))?;
        for block in &self.blocks {
            let h = block.norm1.forward(p, &x)?;
            x = (&x + block.attn.forward(p, &h, &h, &h)?)?;
            let h = block.norm2.forward(p, &x)?;
            x = (&x + block.mlp.forward(p, &h)?)?;
        }
        let tokens = self.neck_norm.forward(p, &self.neck.forward(p, &x)?)?;

        let b = images.dims()[0];
        let mid = self
            .mid
            .forward(p, &patchify(images, 4)?)?
            .gelu()?
            .reshape((b, s / 4, s / 4, self.config.mid_channels))?;
        let fine = images
            .conv2d(p.get(self.stem_weight), 1, 1, 1, 1)?
            .broadcast_add(&p.get(self.stem_bias).reshape((1, (), 1, 1))?)?
            .gelu()?;
        Ok(ImageEmbedding { tokens, mid, fine })
    }
}
