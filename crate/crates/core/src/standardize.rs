//! Fixed-size model input: one uniform scale plus right/bottom zero padding.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Plane};
use crate::stack::Image3;
use crate::{Error, Result};

/// Smallest accepted input side.
pub const MIN_SIDE: usize = 16;

/// How an original image was mapped into the `side x side` model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputTransform {
    pub side: usize,
    /// `side / max(height, width)`.
    pub scale: f64,
    pub original_width: usize,
    pub original_height: usize,
    pub resized_width: usize,
    pub resized_height: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

impl InputTransform {
    pub fn new(width: usize, height: usize, side: usize) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::InputTooSmall {
                width,
                height,
                min: MIN_SIDE,
            });
        }
        let scale = side as f64 / width.max(height) as f64;
        let resized_width = (libm::round(width as f64 * scale) as usize).clamp(1, side);
        let resized_height = (libm::round(height as f64 * scale) as usize).clamp(1, side);
        Ok(Self {
            side,
            scale,
            original_width: width,
            original_height: height,
            resized_width,
            resized_height,
            pad_right: side - resized_width,
            pad_bottom: side - resized_height,
        })
    }

    fn axis_scales(&self) -> (f64, f64) {
        (
            self.resized_width as f64 / self.original_width as f64,
            self.resized_height as f64 / self.original_height as f64,
        )
    }

    /// Continuous model-space position of the center of original pixel
    /// `(x, y)`. Results lie in `[0, side)`.
    pub fn to_model(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = self.axis_scales();
        ((x + 0.5) * sx, (y + 0.5) * sy)
    }

    /// Inverse of [`InputTransform::to_model`].
    pub fn to_original(&self, u: f64, v: f64) -> (f64, f64) {
        let (sx, sy) = self.axis_scales();
        (u / sx - 0.5, v / sy - 0.5)
    }

    /// Map a `side x side` model-space plane back to the original grid:
    /// drop the padding, then resample to the original size.
    pub fn restore(&self, plane: &Plane) -> Result<Plane> {
        if plane.width() != self.side || plane.height() != self.side {
            return Err(Error::ShapeMismatch {
                expected_width: self.side,
                expected_height: self.side,
                width: plane.width(),
                height: plane.height(),
            });
        }
        let cropped = Grid::from_fn(self.resized_width, self.resized_height, |x, y| {
            plane.get(x, y)
        });
        Ok(cropped.resize_bilinear(self.original_width, self.original_height))
    }
}

/// A `side x side` three-channel model input and the transform that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedInput {
    pub image: Image3,
    pub transform: InputTransform,
}

/// Scale the longer side to `side`, keep the aspect ratio and zero-pad on the
/// right and bottom.
pub fn standardize_input(image: &Image3, side: usize) -> Result<StandardizedInput> {
    let transform = InputTransform::new(image.width(), image.height(), side)?;
    let image = image.map_channels(|plane| {
        let resized = if plane.width() == transform.resized_width
            && plane.height() == transform.resized_height
        {
            plane.clone()
        } else {
            plane.resize_bilinear(transform.resized_width, transform.resized_height)
        };
        Grid::from_fn(side, side, |x, y| {
            if x < transform.resized_width && y < transform.resized_height {
                resized.get(x, y)
            } else {
                0.0
            }
        })
    });
    Ok(StandardizedInput { image, transform })
}
