//! Training-time augmentation: horizontal flip, slight rotation, brightness and
//! contrast jitter.
//!
//! Geometric transforms are applied identically to every projection and every
//! label mask; photometric transforms touch projections only. Masks are
//! resampled bilinearly and re-binarized at 0.5.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Mask, Plane};
use crate::sample::OctaSample;
use crate::seed;
use crate::{Error, Result};

/// Largest accepted rotation limit in degrees.
pub const MAX_ROTATION_DEG: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAugmentationConfig")]
pub struct AugmentationConfig {
    pub flip_p: f64,
    pub brightness_p: f64,
    pub brightness_limit: f64,
    pub contrast_p: f64,
    pub contrast_limit: f64,
    pub rotate_p: f64,
    pub rotate_limit_deg: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            brightness_p: 0.5,
            brightness_limit: 0.2,
            contrast_p: 0.5,
            contrast_limit: 0.2,
            rotate_p: 0.5,
            rotate_limit_deg: 15.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(default)]
struct RawAugmentationConfig {
    flip_p: f64,
    brightness_p: f64,
    brightness_limit: f64,
    contrast_p: f64,
    contrast_limit: f64,
    rotate_p: f64,
    rotate_limit_deg: f64,
}

impl Default for RawAugmentationConfig {
    fn default() -> Self {
        let d = AugmentationConfig::default();
        Self {
            flip_p: d.flip_p,
            brightness_p: d.brightness_p,
            brightness_limit: d.brightness_limit,
            contrast_p: d.contrast_p,
            contrast_limit: d.contrast_limit,
            rotate_p: d.rotate_p,
            rotate_limit_deg: d.rotate_limit_deg,
        }
    }
}

impl TryFrom<RawAugmentationConfig> for AugmentationConfig {
    type Error = Error;

    fn try_from(r: RawAugmentationConfig) -> Result<Self> {
        AugmentationConfig {
            flip_p: r.flip_p,
            brightness_p: r.brightness_p,
            brightness_limit: r.brightness_limit,
            contrast_p: r.contrast_p,
            contrast_limit: r.contrast_limit,
            rotate_p: r.rotate_p,
            rotate_limit_deg: r.rotate_limit_deg,
        }
        .validated()
    }
}

impl AugmentationConfig {
    /// Every probability zero.
    pub fn none() -> Self {
        Self {
            flip_p: 0.0,
            brightness_p: 0.0,
            contrast_p: 0.0,
            rotate_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validated(self) -> Result<Self> {
        for (name, p) in [
            ("flip_p", self.flip_p),
            ("brightness_p", self.brightness_p),
            ("contrast_p", self.contrast_p),
            ("rotate_p", self.rotate_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name}={p} is not in [0, 1]")));
            }
        }
        if !(0.0..=MAX_ROTATION_DEG).contains(&self.rotate_limit_deg) {
            return Err(Error::InvalidConfig(format!(
                "rotate_limit_deg={} must be in [0, {MAX_ROTATION_DEG}]",
                self.rotate_limit_deg
            )));
        }
        if self.brightness_limit < 0.0 || self.contrast_limit < 0.0 {
            return Err(Error::InvalidConfig(
                "brightness/contrast limits must be non-negative".into(),
            ));
        }
        Ok(self)
    }
}

/// The concrete transform drawn for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub rotation_deg: Option<f64>,
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
}

impl AugmentDraw {
    /// Draw parameters. The number of random draws is fixed so that toggling
    /// one probability does not reshuffle the others.
    pub fn sample(config: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        let u_flip: f64 = rng.random();
        let u_rot: f64 = rng.random();
        let angle = (rng.random::<f64>() * 2.0 - 1.0) * config.rotate_limit_deg;
        let u_bright: f64 = rng.random();
        let bright = (rng.random::<f64>() * 2.0 - 1.0) * config.brightness_limit;
        let u_con: f64 = rng.random();
        let con = (rng.random::<f64>() * 2.0 - 1.0) * config.contrast_limit;
        Self {
            flip: u_flip < config.flip_p,
            rotation_deg: (u_rot < config.rotate_p).then_some(angle),
            brightness: (u_bright < config.brightness_p).then_some(bright),
            contrast: (u_con < config.contrast_p).then_some(con),
        }
    }
}

/// Augment one sample. Deterministic in `(seed, sample.sample_id)`.
pub fn augment(sample: &OctaSample, config: &AugmentationConfig, seed: u64) -> Result<OctaSample> {
    let mut rng = seed::rng(seed::combine(seed, seed::hash_str(&sample.sample_id)));
    let draw = AugmentDraw::sample(config, &mut rng);
    apply(sample, &draw)
}

/// Apply an explicit draw.
pub fn apply(sample: &OctaSample, draw: &AugmentDraw) -> Result<OctaSample> {
    let geometric_plane = |p: &Plane| -> Plane {
        let p = if draw.flip { p.flip_horizontal() } else { p.clone() };
        match draw.rotation_deg {
            Some(deg) if deg != 0.0 => rotate_plane(&p, deg),
            _ => p,
        }
    };
    let geometric_mask = |m: &Mask| -> Mask {
        let m = if draw.flip { m.flip_horizontal() } else { m.clone() };
        match draw.rotation_deg {
            Some(deg) if deg != 0.0 => rotate_plane(&m.to_plane(), deg).threshold(0.5),
            _ => m,
        }
    };

    let projections: Vec<_> = sample
        .projections()
        .iter()
        .map(|(name, p)| {
            let mut p = geometric_plane(p);
            if let Some(b) = draw.brightness {
                adjust(&mut p, 1.0, b as f32);
            }
            if let Some(c) = draw.contrast {
                adjust(&mut p, 1.0 + c as f32, 0.0);
            }
            (name.clone(), p)
        })
        .collect();
    let labels: BTreeMap<_, _> = sample
        .labels()
        .iter()
        .map(|(t, m)| (*t, geometric_mask(m)))
        .collect();
    sample.with_parts(projections, labels)
}

fn adjust(p: &mut Plane, gain: f32, offset: f32) {
    for v in p.data_mut() {
        *v = (*v * gain + offset).clamp(0.0, 1.0);
    }
}

/// Rotate counter-clockwise (in image coordinates) about the grid center,
/// bilinear, zero fill.
pub fn rotate_plane(p: &Plane, degrees: f64) -> Plane {
    let theta = degrees.to_radians();
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let cx = (p.width() as f64 - 1.0) / 2.0;
    let cy = (p.height() as f64 - 1.0) / 2.0;
    Grid::from_fn(p.width(), p.height(), |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        // inverse rotation maps the output pixel back to its source
        let sx = c * dx + s * dy + cx;
        let sy = -s * dx + c * dy + cy;
        p.sample_bilinear(sx, sy, 0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{Fov, TaskName};
    use alloc::string::ToString;
    use alloc::vec;

    fn sample() -> OctaSample {
        let plane = Grid::from_fn(24, 20, |x, y| ((x * 7 + y * 3) % 13) as f32 / 12.0);
        let mask = Grid::from_fn(24, 20, |x, y| u8::from((5..15).contains(&x) && y == 9));
        let mut labels = BTreeMap::new();
        labels.insert(TaskName::Rv, mask);
        OctaSample::new("s", Fov::Fov3M, vec![("FULL".to_string(), plane)], labels).unwrap()
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let s = sample();
        assert_eq!(augment(&s, &AugmentationConfig::none(), 3).unwrap(), s);
    }

    #[test]
    fn flip_is_an_involution() {
        let s = sample();
        let cfg = AugmentationConfig {
            flip_p: 1.0,
            ..AugmentationConfig::none()
        };
        let once = augment(&s, &cfg, 1).unwrap();
        assert_ne!(once, s);
        assert_eq!(augment(&once, &cfg, 1).unwrap(), s);
    }

    #[test]
    fn same_seed_same_output() {
        let s = sample();
        let cfg = AugmentationConfig::default();
        assert_eq!(augment(&s, &cfg, 7).unwrap(), augment(&s, &cfg, 7).unwrap());
    }

    #[test]
    fn photometric_leaves_masks_alone() {
        let s = sample();
        let cfg = AugmentationConfig {
            brightness_p: 1.0,
            contrast_p: 1.0,
            ..AugmentationConfig::none()
        };
        let out = augment(&s, &cfg, 11).unwrap();
        assert_eq!(out.labels(), s.labels());
        assert_ne!(out.projections(), s.projections());
    }

    #[test]
    fn rotation_keeps_masks_binary() {
        let s = sample();
        let cfg = AugmentationConfig {
            rotate_p: 1.0,
            rotate_limit_deg: 30.0,
            ..AugmentationConfig::none()
        };
        let out = augment(&s, &cfg, 5).unwrap();
        assert!(out.labels().values().all(|m| m.is_binary()));
    }

    #[test]
    fn rejects_bad_probability() {
        let cfg = AugmentationConfig {
            flip_p: 1.5,
            ..AugmentationConfig::default()
        };
        assert!(cfg.validated().is_err());
        let cfg = AugmentationConfig {
            rotate_limit_deg: 45.0,
            ..AugmentationConfig::default()
        };
        assert!(cfg.validated().is_err());
    }
}
