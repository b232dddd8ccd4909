use candle_core::{Tensor, D};

use super::params::{Group, Init, ParamId, Params};
use crate::error::Result;

/// Low-rank branch added to a frozen projection: `scale · B·A·x`.
#[derive(Debug, Clone)]
pub struct LoraBranch {
    /// `rank × d_in`
    pub a: ParamId,
    /// `d_out × rank`, zero at injection.
    pub b: ParamId,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
    pub name: String,
    pub lora: Option<LoraBranch>,
}

impl Linear {
    pub fn new(p: &mut Params, init: &Init, name: &str, group: Group, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = p.add(format!("{name}.weight"), group, init.uniform(&format!("{name}.weight"), &[d_out, d_in], bound)?);
        let bias = p.add(format!("{name}.bias"), group, init.zeros(&[d_out])?);
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
            name: name.to_string(),
            lora: None,
        })
    }

    /// Applies to the last dimension of `x`.
    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<Tensor> {
        let mut dims = x.dims().to_vec();
        let x2 = x.reshape(((), self.d_in))?;
        let mut y = x2
            .matmul(&p.get(self.weight).t()?)?
            .broadcast_add(p.get(self.bias))?;
        if let Some(lora) = &self.lora {
            let low = x2.matmul(&p.get(lora.a).t()?)?;
            let delta = (low.matmul(&p.get(lora.b).t()?)? * lora.scale)?;
            y = (y + delta)?;
        }
        *dims.last_mut().expect("non-scalar input") = self.d_out;
        Ok(y.reshape(dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(p: &mut Params, init: &Init, name: &str, group: Group, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: p.add(format!("{name}.gain"), group, init.ones(&[dim])?),
            bias: p.add(format!("{name}.bias"), group, init.zeros(&[dim])?),
        })
    }

    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<Tensor> {
        // the fused candle-nn kernel has no backward pass
        Ok(candle_nn::ops::layer_norm_slow(x, p.get(self.gain), p.get(self.bias), 1e-5)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Gelu => x.gelu()?,
            Activation::Relu => x.relu()?,
        })
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(p: &mut Params, init: &Init, name: &str, group: Group, dims: &[usize], activation: Activation) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(p, init, &format!("{name}.{i}"), group, w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, p: &Params, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, &x)?;
            if i + 1 < self.layers.len() {
                x = self.activation.apply(&x)?;
            }
        }
        Ok(x)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(p: &mut Params, init: &Init, name: &str, group: Group, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(p, init, &format!("{name}.q"), group, dim, dim)?,
            k: Linear::new(p, init, &format!("{name}.k"), group, dim, dim)?,
            v: Linear::new(p, init, &format!("{name}.v"), group, dim, dim)?,
            o: Linear::new(p, init, &format!("{name}.o"), group, dim, dim)?,
            heads,
        })
    }

    pub fn projections_mut(&mut self) -> [&mut Linear; 4] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o]
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        Ok(x
            .reshape((b, n, self.heads, c / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `query: (B, Nq, C)`, `key`/`value: (B, Nk, C)`.
    pub fn forward(&self, p: &Params, query: &Tensor, key: &Tensor, value: &Tensor) -> Result<Tensor> {
        let (b, nq, c) = query.dims3()?;
        let q = self.split(&self.q.forward(p, query)?)?;
        let k = self.split(&self.k.forward(p, key)?)?;
        let v = self.split(&self.v.forward(p, value)?)?;
        let head_dim = c / self.heads;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (head_dim as f64).sqrt()))?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let out = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, nq, c))?;
        self.o.forward(p, &out)
    }
}

/// Rearrange `(B, H, W, r·r·C)` into `(B, H·r, W·r, C)`.
pub fn pixel_shuffle_last(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    let out_c = c / (r * r);
    Ok(x
        .reshape(vec![b, h, w, r, r, out_c])?
        .permute(vec![0, 1, 3, 2, 4, 5])?
        .contiguous()?
        .reshape((b, h * r, w * r, out_c))?)
}
