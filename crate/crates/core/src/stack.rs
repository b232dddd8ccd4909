//! Stacking en-face projections into a 3-channel image.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::grid::Plane;
use crate::sample::{OctaSample, DEFAULT_LAYERS, LAYER_FULL};
use crate::{Error, Result};

/// Three equally sized channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image3 {
    pub channels: [Plane; 3],
}

impl Image3 {
    pub fn new(channels: [Plane; 3]) -> Result<Self> {
        channels[0].ensure_shape(&channels[1])?;
        channels[0].ensure_shape(&channels[2])?;
        Ok(Self { channels })
    }

    /// A grayscale plane replicated into every channel.
    pub fn gray(plane: Plane) -> Self {
        Self {
            channels: [plane.clone(), plane.clone(), plane],
        }
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn map_channels(&self, f: impl Fn(&Plane) -> Plane) -> Self {
        Self {
            channels: [
                f(&self.channels[0]),
                f(&self.channels[1]),
                f(&self.channels[2]),
            ],
        }
    }

    /// Channel-major `[3, H, W]` buffer.
    pub fn to_chw(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(3 * self.width() * self.height());
        for c in &self.channels {
            out.extend_from_slice(c.data());
        }
        out
    }
}

/// Stack the selected layers in selection order. One layer is replicated
/// three times; with two layers the first is repeated as the third channel.
pub fn stack_projections<S: AsRef<str>>(sample: &OctaSample, selection: &[S]) -> Result<Image3> {
    if selection.is_empty() || selection.len() > 3 {
        return Err(Error::InvalidConfig(format!(
            "layer selection must name 1 to 3 layers, got {}",
            selection.len()
        )));
    }
    let planes = selection
        .iter()
        .map(|name| {
            sample
                .projection(name.as_ref())
                .cloned()
                .ok_or_else(|| Error::UnknownLayer {
                    requested: name.as_ref().to_string(),
                    available: sample.layer_names(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let channels = match planes.len() {
        1 => [planes[0].clone(), planes[0].clone(), planes[0].clone()],
        2 => [planes[0].clone(), planes[1].clone(), planes[0].clone()],
        _ => [planes[0].clone(), planes[1].clone(), planes[2].clone()],
    };
    Ok(Image3 { channels })
}

/// The three standard en-face projections when all are present, otherwise the
/// full-depth projection (or the first available one) alone.
pub fn default_layer_selection(sample: &OctaSample) -> Vec<String> {
    if DEFAULT_LAYERS.iter().all(|l| sample.projection(l).is_some()) {
        return DEFAULT_LAYERS.iter().map(|s| s.to_string()).collect();
    }
    if sample.projection(LAYER_FULL).is_some() {
        return alloc::vec![LAYER_FULL.to_string()];
    }
    alloc::vec![sample.projections()[0].0.clone()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::sample::Fov;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn sample() -> OctaSample {
        let projections = vec![
            ("full".to_string(), Grid::new(4, 4, 0.1f32)),
            ("inner".to_string(), Grid::new(4, 4, 0.2f32)),
            ("outer".to_string(), Grid::new(4, 4, 0.3f32)),
        ];
        OctaSample::new("a", Fov::Fov3M, projections, BTreeMap::new()).unwrap()
    }

    fn firsts(img: &Image3) -> [f32; 3] {
        [
            img.channels[0].get(0, 0),
            img.channels[1].get(0, 0),
            img.channels[2].get(0, 0),
        ]
    }

    #[test]
    fn stacks_in_selection_order() {
        let img = stack_projections(&sample(), &["full", "inner", "outer"]).unwrap();
        assert_eq!(firsts(&img), [0.1, 0.2, 0.3]);
        let img = stack_projections(&sample(), &["outer", "full", "inner"]).unwrap();
        assert_eq!(firsts(&img), [0.3, 0.1, 0.2]);
    }

    #[test]
    fn replicates_short_selections() {
        let img = stack_projections(&sample(), &["full"]).unwrap();
        assert_eq!(firsts(&img), [0.1, 0.1, 0.1]);
        let img = stack_projections(&sample(), &["inner", "outer"]).unwrap();
        assert_eq!(firsts(&img), [0.2, 0.3, 0.2]);
    }

    #[test]
    fn unknown_layer_lists_available() {
        let err = stack_projections(&sample(), &["bogus"]).unwrap_err();
        match err {
            Error::UnknownLayer {
                requested,
                available,
            } => {
                assert_eq!(requested, "bogus");
                assert_eq!(available, vec!["full", "inner", "outer"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_selection_falls_back_to_first() {
        assert_eq!(default_layer_selection(&sample()), vec!["full".to_string()]);
    }
}
