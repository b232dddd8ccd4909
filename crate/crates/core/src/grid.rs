//! Row-major 2D grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A dense row-major grid. `x` indexes columns, `y` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Intensity plane, nominally in `[0, 1]`.
pub type Plane = Grid<f32>;

/// Binary mask with values in `{0, 1}`.
pub type Mask = Grid<u8>;

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadGridLength {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Bounds-checked read with signed coordinates.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<T> {
        if self.contains(x, y) {
            Some(self.data[y as usize * self.width + x as usize])
        } else {
            None
        }
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected_width: self.width,
                expected_height: self.height,
                width: other.width,
                height: other.height,
            })
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }
}

impl Mask {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Map any nonzero value to 1.
    pub fn binarized(&self) -> Mask {
        self.map(|v| u8::from(v != 0))
    }

    /// `(x, y)` coordinates of all foreground pixels in raster order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.positions(|v| v != 0)
    }

    pub fn background(&self) -> Vec<(usize, usize)> {
        self.positions(|v| v == 0)
    }

    fn positions(&self, pred: impl Fn(u8) -> bool) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| pred(v))
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.ensure_shape(other)?;
        Ok(self.zip_with(other, |a, b| u8::from(a != 0 || b != 0)))
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.ensure_shape(other)?;
        Ok(self.zip_with(other, |a, b| u8::from(a != 0 && b != 0)))
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.ensure_shape(other)?;
        Ok(self.zip_with(other, |a, b| u8::from(a != 0 && b == 0)))
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(u8, u8) -> u8) -> Mask {
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn to_plane(&self) -> Plane {
        self.map(|v| if v != 0 { 1.0 } else { 0.0 })
    }
}

impl Plane {
    /// `value >= threshold` becomes 1.
    pub fn threshold(&self, threshold: f32) -> Mask {
        self.map(|v| u8::from(v >= threshold))
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions). Out-of-range taps read `fill`.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: f32) -> f32 {
        let x0 = libm::floor(x);
        let y0 = libm::floor(y);
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let tap = |xx: i64, yy: i64| self.get_signed(xx, yy).unwrap_or(fill);
        let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
        let bottom = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize with half-pixel centers (no corner alignment).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Plane {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        Grid::from_fn(width, height, |x, y| {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            self.sample_bilinear(src_x, src_y, 0.0)
        })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}
