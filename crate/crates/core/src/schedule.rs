//! Linear warm-up learning-rate schedule with optional cosine decay.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    /// Hold the peak rate after warm-up.
    None,
    /// Cosine back down to the starting rate at the final step.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub lr_start: f64,
    pub lr_peak: f64,
    pub warmup_fraction: f64,
    pub decay: Decay,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr_start: 1e-5,
            lr_peak: 1e-3,
            warmup_fraction: 0.1,
            decay: Decay::Cosine,
        }
    }
}

impl LrSchedule {
    pub fn validated(self) -> Result<Self> {
        if !(self.lr_start > 0.0 && self.lr_start < self.lr_peak) {
            return Err(Error::InvalidConfig(alloc::format!(
                "need 0 < lr_start < lr_peak, got {} and {}",
                self.lr_start,
                self.lr_peak
            )));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "warmup_fraction {} must be in (0, 1)",
                self.warmup_fraction
            )));
        }
        Ok(self)
    }

    /// Last warm-up step (the step at which the peak rate is reached).
    pub fn warmup_end(&self, total_steps: usize) -> usize {
        let w = libm::round(self.warmup_fraction * total_steps as f64) as usize;
        w.clamp(1, total_steps.max(1))
    }

    /// Rate at `step` in `0..=total_steps`.
    ///
    /// Both phases are written as convex combinations of the two endpoint
    /// rates, so `lr_at(0) == lr_start` and `lr_at(warmup_end) == lr_peak`
    /// hold bit-exactly.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> Result<f64> {
        if step > total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: total_steps,
            });
        }
        let warm = self.warmup_end(total_steps);
        let mix = |w: f64| self.lr_start * (1.0 - w) + self.lr_peak * w;
        let lr = if step <= warm {
            mix(step as f64 / warm as f64)
        } else {
            match self.decay {
                Decay::None => self.lr_peak,
                Decay::Cosine => {
                    let u = (step - warm) as f64 / (total_steps - warm) as f64;
                    mix(0.5 * (1.0 + libm::cos(core::f64::consts::PI * u)))
                }
            }
        };
        Ok(lr.min(self.lr_peak))
    }
}
