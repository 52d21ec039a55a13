//! Single-channel raster images and validity masks.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// A 2-D single-channel real-valued raster, row-major with a top-left origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
    /// Physical pixel size in meters, if known.
    pub pixel_size: Option<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
            pixel_size: None,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "buffer of {} values cannot hold a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            pixel_size: None,
        })
    }

    /// Build an image by evaluating `f(column, row)` at every pixel. Rows are
    /// filled in parallel; the result does not depend on scheduling.
    pub fn from_fn<F>(width: usize, height: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let mut data = vec![0.0; width * height];
        if width > 0 {
            data.par_chunks_mut(width)
                .enumerate()
                .for_each(|(row, out)| {
                    for (col, v) in out.iter_mut().enumerate() {
                        *v = f(col, row);
                    }
                });
        }
        Self {
            width,
            height,
            data,
            pixel_size: None,
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
            pixel_size: self.pixel_size,
        }
    }

    /// Elementwise combination of two same-shaped images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            pixel_size: self.pixel_size,
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Mean over all pixels (NaNs included).
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean over finite pixels only; `None` if there are none.
    pub fn finite_mean(&self) -> Option<f64> {
        let (sum, n) = self
            .data
            .iter()
            .filter(|v| v.is_finite())
            .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Copy out the `w`x`h` sub-image whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidParameter(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y0..y0 + h {
            data.extend_from_slice(&self.row(row)[x0..x0 + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
            pixel_size: self.pixel_size,
        })
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle, top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    #[inline]
    pub fn contains(&self, col: usize, row: usize) -> bool {
        col >= self.x && col < self.x + self.width && row >= self.y && row < self.y + self.height
    }

    /// Shrink by `margin` pixels on every side.
    pub fn inset(&self, margin: usize) -> Rect {
        let m2 = 2 * margin;
        Rect {
            x: self.x + margin,
            y: self.y + margin,
            width: self.width.saturating_sub(m2),
            height: self.height.saturating_sub(m2),
        }
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x + self.width <= width && self.y + self.height <= height
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.height)
            .flat_map(move |r| (self.x..self.x + self.width).map(move |c| (c, r)))
    }
}

/// Per-pixel validity flags. `true` means the pixel carries a trustworthy value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, valid: bool) -> Self {
        Self {
            width,
            height,
            data: vec![valid; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "mask buffer of {} values cannot hold {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Valid wherever the image value is finite.
    pub fn finite(image: &Image) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            data: image.data().iter().map(|v| v.is_finite()).collect(),
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, valid: bool) {
        self.data[row * self.width + col] = valid;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Pixelwise AND.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    /// Replace every masked-out pixel of `image` with NaN.
    pub fn apply_nan(&self, image: &mut Image) {
        for (v, &ok) in image.data_mut().iter_mut().zip(&self.data) {
            if !ok {
                *v = f64::NAN;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_fn_is_row_major() {
        let img = Image::from_fn(3, 2, |c, r| (10 * r + c) as f64);
        assert_eq!(img.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(img.get(2, 1), 12.0);
    }

    #[test]
    fn zip_map_rejects_mismatched_shapes() {
        let a = Image::zeros(3, 2);
        let b = Image::zeros(2, 3);
        assert!(matches!(
            a.zip_map(&b, |x, y| x + y),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn crop_copies_window() {
        let img = Image::from_fn(4, 4, |c, r| (r * 4 + c) as f64);
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[9.0, 10.0, 13.0, 14.0]);
        assert!(img.crop(3, 3, 2, 2).is_err());
    }

    #[test]
    fn finite_mask_and_nan_roundtrip() {
        let mut img = Image::from_vec(2, 2, vec![1.0, f64::NAN, 3.0, 4.0]).unwrap();
        let m = Mask::finite(&img);
        assert_eq!(m.count_valid(), 3);
        assert_eq!(img.finite_mean(), Some(8.0 / 3.0));
        let mut m2 = Mask::new(2, 2, true);
        m2.set(0, 0, false);
        m2.apply_nan(&mut img);
        assert!(img.get(0, 0).is_nan());
    }
}
