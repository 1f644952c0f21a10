//! Single-channel images and binary masks, both row-major.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A row-major `height × width` grid of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
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

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy of the `height × width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "window {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn ensure_dims(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!(
                "{what} is {}x{}, expected {}x{}",
                self.height, self.width, dims.0, dims.1
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..=self.bottom).contains(&row) && (self.left..=self.right).contains(&col)
    }

    /// Grows the rectangle by `by` pixels on every side, clipped to the grid.
    pub fn dilate(&self, by: usize, height: usize, width: usize) -> Rect {
        Rect {
            top: self.top.saturating_sub(by),
            left: self.left.saturating_sub(by),
            bottom: (self.bottom + by).min(height - 1),
            right: (self.right + by).min(width - 1),
        }
    }
}

/// Binary grid. Scene masks follow the inpainting convention: 1 marks
/// background, 0 marks the given foreground subject. Segmentation output
/// uses 1 for "subject".
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask entries for a {height}x{width} grid",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Shape("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Background everywhere except the rectangle.
    pub fn with_foreground_rect(height: usize, width: usize, rect: Rect) -> Self {
        let mut mask = Self::filled(height, width, true);
        for r in rect.top..=rect.bottom {
            for c in rect.left..=rect.right {
                mask.set(r, c, false);
            }
        }
        mask
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.data.len() - self.count_ones()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// The mask as reals (1.0 where set).
    pub fn to_weights(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Bounding box of the zero entries (the foreground of a scene mask).
    pub fn zeros_bbox(&self) -> Option<Rect> {
        self.bbox_of(0)
    }

    /// Bounding box of the one entries.
    pub fn ones_bbox(&self) -> Option<Rect> {
        self.bbox_of(1)
    }

    fn bbox_of(&self, value: u8) -> Option<Rect> {
        let mut rect: Option<Rect> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.data[r * self.width + c] != value {
                    continue;
                }
                rect = Some(match rect {
                    None => Rect {
                        top: r,
                        left: c,
                        bottom: r,
                        right: c,
                    },
                    Some(b) => Rect {
                        top: b.top.min(r),
                        left: b.left.min(c),
                        bottom: b.bottom.max(r),
                        right: b.right.max(c),
                    },
                });
            }
        }
        rect
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Mask> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "window {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in top..top + height {
            let start = r * self.width + left;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn ensure_dims(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!(
                "{what} is {}x{}, expected {}x{}",
                self.height, self.width, dims.0, dims.1
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn foreground_rect_round_trips_through_bbox() {
        let rect = Rect {
            top: 2,
            left: 3,
            bottom: 5,
            right: 4,
        };
        let mask = Mask::with_foreground_rect(8, 8, rect);
        assert_eq!(mask.zeros_bbox(), Some(rect));
        assert_eq!(mask.count_zeros(), rect.area());
        assert_eq!(mask.complement().ones_bbox(), Some(rect));
    }

    #[test]
    fn crop_rejects_out_of_bounds_window() {
        let img = Image::zeros(4, 4);
        assert!(img.crop(1, 1, 3, 3).is_ok());
        assert!(matches!(img.crop(2, 0, 3, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_rejects_non_binary_entries() {
        assert!(Mask::from_vec(1, 2, alloc::vec![0, 2]).is_err());
    }
}
