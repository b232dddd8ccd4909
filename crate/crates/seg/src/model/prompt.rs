use candle_core::Tensor;
use octa_core::{PromptSet, PromptSource};

use super::params::{Group, Init, ParamId, Params};
use crate::error::{Error, Result};

/// Row of the label-embedding table used for a point.
pub const LABEL_NEGATIVE: usize = 0;
pub const LABEL_POSITIVE: usize = 1;
pub const LABEL_PAD: usize = 2;

pub fn label_index(source: PromptSource, label: u8) -> usize {
    match (source, label) {
        (PromptSource::Pad, _) => LABEL_PAD,
        (_, 0) => LABEL_NEGATIVE,
        _ => LABEL_POSITIVE,
    }
}

/// Random-Fourier positional encoding plus learned label embeddings.
#[derive(Debug, Clone)]
pub struct PromptEncoder {
    /// `(2, dim/2)` fixed frequency matrix.
    pub frequencies: ParamId,
    /// `(3, dim)` rows indexed by [`LABEL_NEGATIVE`], [`LABEL_POSITIVE`], [`LABEL_PAD`].
    pub labels: ParamId,
    /// Added to every image token (no dense prompt is supported).
    pub no_mask: ParamId,
    side: usize,
    dim: usize,
}

impl PromptEncoder {
    pub fn new(p: &mut Params, init: &Init, side: usize, dim: usize) -> Result<Self> {
        let g = Group::Prompt;
        Ok(Self {
            frequencies: p.add("prompt.frequencies", g, init.normal("prompt.frequencies", &[2, dim / 2], 1.0)?),
            labels: p.add("prompt.labels", g, init.normal("prompt.labels", &[3, dim], 1.0)?),
            no_mask: p.add("prompt.no_mask", g, init.normal("prompt.no_mask", &[dim], 0.02)?),
            side,
            dim,
        })
    }

    /// `coords: (n, 2)` in `[-1, 1]` to `(n, dim)`.
    fn fourier(&self, p: &Params, coords: &Tensor) -> Result<Tensor> {
        let proj = (coords.matmul(p.get(self.frequencies))? * std::f64::consts::TAU)?;
        Ok(Tensor::cat(&[proj.sin()?, proj.cos()?], 1)?)
    }

    fn normalize(&self, v: f64) -> f32 {
        (2.0 * (v + 0.5) / self.side as f64 - 1.0) as f32
    }

    /// Positional encoding of the patch-grid centers, `(grid², dim)`.
    pub fn dense_pe(&self, p: &Params, grid: usize) -> Result<Tensor> {
        let cell = self.side as f64 / grid as f64;
        let mut coords = Vec::with_capacity(grid * grid * 2);
        for gy in 0..grid {
            for gx in 0..grid {
                coords.push(self.normalize((gx as f64 + 0.5) * cell - 0.5));
                coords.push(self.normalize((gy as f64 + 0.5) * cell - 0.5));
            }
        }
        let coords = Tensor::from_vec(coords, (grid * grid, 2), p.device())?;
        self.fourier(p, &coords)
    }

    /// One token per point, `(B, P, dim)`; `None` when the sets are empty.
    /// Every set in the batch must have the same length.
    pub fn encode(&self, p: &Params, sets: &[PromptSet]) -> Result<Option<Tensor>> {
        let n = sets.first().map_or(0, PromptSet::len);
        if n == 0 {
            if let Some(bad) = sets.iter().position(|s| !s.is_empty()) {
                return Err(Error::Config(format!("prompt set {bad} has {} points, expected 0", sets[bad].len())));
            }
            return Ok(None);
        }
        let mut coords = Vec::with_capacity(sets.len() * n * 2);
        let mut labels = Vec::with_capacity(sets.len() * n);
        for (i, set) in sets.iter().enumerate() {
            if set.len() != n {
                return Err(Error::Config(format!("prompt set {i} has {} points, expected {n}", set.len())));
            }
            for (index, point) in set.points.iter().enumerate() {
                if point.x as usize >= self.side || point.y as usize >= self.side {
                    return Err(Error::PointOutOfBounds {
                        index,
                        x: point.x,
                        y: point.y,
                        side: self.side,
                    });
                }
                coords.push(self.normalize(point.x as f64));
                coords.push(self.normalize(point.y as f64));
                labels.push(label_index(point.source, point.label) as u32);
            }
        }
        let device = p.device();
        let coords = Tensor::from_vec(coords, (sets.len() * n, 2), device)?;
        let labels = Tensor::from_vec(labels, sets.len() * n, device)?;
        let tokens = (self.fourier(p, &coords)? + p.get(self.labels).index_select(&labels, 0)?)?;
        Ok(Some(tokens.reshape((sets.len(), n, self.dim))?))
    }
}
