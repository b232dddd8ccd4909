//! Flat parameter table. Modules hold [`ParamId`]s and look tensors up at
//! forward time, which keeps freezing, snapshots and checkpoints in one place.

use candle_core::{DType, Device, Tensor, Var};
use octa_core::seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Encoder,
    Prompt,
    Decoder,
    Adapter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
enum Value {
    /// Plain tensor: never receives gradients.
    Frozen(Tensor),
    Trainable(Var),
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    value: Value,
}

impl ParamEntry {
    pub fn tensor(&self) -> &Tensor {
        match &self.value {
            Value::Frozen(t) => t,
            Value::Trainable(v) => v.as_tensor(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.value, Value::Trainable(_))
    }
}

#[derive(Debug, Clone)]
pub struct Params {
    entries: Vec<ParamEntry>,
    device: Device,
}

impl Params {
    pub fn new(device: Device) -> Self {
        Self {
            entries: Vec::new(),
            device,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn add(&mut self, name: impl Into<String>, group: Group, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            value: Value::Frozen(tensor),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        self.entries[id.0].tensor()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) -> Result<()> {
        let entry = &mut self.entries[id.0];
        entry.value = match (&entry.value, trainable) {
            (Value::Frozen(t), true) => Value::Trainable(Var::from_tensor(t)?),
            (Value::Trainable(v), false) => Value::Frozen(v.as_tensor().detach()),
            (v, _) => v.clone(),
        };
        Ok(())
    }

    pub fn set_group_trainable(&mut self, group: Group, trainable: bool) -> Result<()> {
        for i in 0..self.entries.len() {
            if self.entries[i].group == group {
                self.set_trainable(ParamId(i), trainable)?;
            }
        }
        Ok(())
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter_map(|e| match &e.value {
                Value::Trainable(v) => Some(v.clone()),
                Value::Frozen(_) => None,
            })
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.is_trainable())
            .map(|e| e.tensor().elem_count())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor().elem_count()).sum()
    }

    /// Overwrite a parameter's value, keeping its trainable flag.
    pub fn assign(&mut self, name: &str, value: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| crate::Error::Checkpoint(format!("unknown parameter {name}")))?;
        let value = value.to_dtype(DType::F32)?.reshape(entry.tensor().shape())?;
        match &mut entry.value {
            Value::Frozen(t) => *t = value,
            Value::Trainable(v) => v.set(&value)?,
        }
        Ok(())
    }
}

/// Deterministic initializers keyed by parameter name.
pub struct Init {
    seed: u64,
    device: Device,
}

impl Init {
    pub fn new(seed: u64, device: Device) -> Self {
        Self { seed, device }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        seed::rng(seed::combine(self.seed, seed::hash_str(name)))
    }

    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let mut rng = self.rng(name);
        let n = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| (rng.random_range(-bound..bound)) as f32)
            .collect();
        Ok(Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn normal(&self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let mut rng = self.rng(name);
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            // Box-Muller
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt();
            let t = std::f64::consts::TAU * u2;
            data.push((r * t.cos() * std) as f32);
            data.push((r * t.sin() * std) as f32);
        }
        data.truncate(n);
        Ok(Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn zeros(&self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::zeros(shape, DType::F32, &self.device)?)
    }

    pub fn ones(&self, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::ones(shape, DType::F32, &self.device)?)
    }
}

/// Seed for adapter initialization, derived from the base source.
pub(crate) fn mix_seed(base: &super::BaseSource) -> u64 {
    match base {
        super::BaseSource::Random { seed } => seed::combine(*seed, 0xADA9),
        super::BaseSource::File { sha256 } => seed::hash_str(sha256),
    }
}
