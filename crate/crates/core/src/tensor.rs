//! Dense row-major, channel-last arrays.
//!
//! Values are held as `f64` so the optimizer and gradient code never lose
//! precision, while the on-disk format stays `f32`. Anything loaded from disk
//! is exactly representable in `f32`, so `load -> save` is byte-exact.

use crate::error::DataError;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DataError> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(DataError::DimMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteData);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Builds an `h x w x c` tensor by evaluating `f(y, x, c)`.
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch));
                }
            }
        }
        let shape = if c == 1 { vec![h, w] } else { vec![h, w, c] };
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn height(&self) -> usize {
        self.shape[0]
    }

    pub fn width(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn channels(&self) -> usize {
        self.shape.get(2).copied().unwrap_or(1)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_dims(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width() + x) * self.channels() + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let (w, ch) = (self.width(), self.channels());
        self.data[(y * w + x) * ch + c] = v;
    }

    /// Bilinear sample at continuous pixel coordinates (integer = pixel
    /// center). Returns `None` outside `[0, w-1] x [0, h-1]`.
    pub fn bilinear(&self, x: f64, y: f64, c: usize) -> Option<f64> {
        let (h, w) = (self.height(), self.width());
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (y.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.at(y0, x0, c) * (1.0 - fx) + self.at(y0, x1, c) * fx;
        let bot = self.at(y1, x0, c) * (1.0 - fx) + self.at(y1, x1, c) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }

    /// Samples a 2-channel field (flow) bilinearly.
    pub fn bilinear2(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        Some([self.bilinear(x, y, 0)?, self.bilinear(x, y, 1)?])
    }

    /// Luminance (Rec. 601) of an RGB tensor, or a copy of a 1-channel one.
    pub fn grayscale(&self) -> Tensor {
        let (h, w, c) = (self.height(), self.width(), self.channels());
        if c == 1 {
            return Tensor::from_fn(h, w, 1, |y, x, _| self.at(y, x, 0));
        }
        Tensor::from_fn(h, w, 1, |y, x, _| {
            0.299 * self.at(y, x, 0) + 0.587 * self.at(y, x, 1) + 0.114 * self.at(y, x, 2)
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rounds every element to the nearest `f32`.
    pub fn to_f32_precision(&self) -> Tensor {
        self.map(|v| v as f32 as f64)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Binary per-pixel annotation on a frame grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask2D {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask2D {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self, DataError> {
        if data.len() != height * width {
            return Err(DataError::DimMismatch {
                expected: height * width,
                found: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Looks up the pixel nearest to a continuous coordinate; `false` outside.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return false;
        }
        self.get(yi as usize, xi as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn ratio(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union(&self, other: &Mask2D) -> Mask2D {
        assert_eq!((self.height, self.width), (other.height, other.width));
        Mask2D {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn intersect(&self, other: &Mask2D) -> Mask2D {
        assert_eq!((self.height, self.width), (other.height, other.width));
        Mask2D {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn not(&self) -> Mask2D {
        Mask2D {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn iou(&self, other: &Mask2D) -> f64 {
        let inter = self.intersect(other).count();
        let uni = self.union(other).count();
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    fn morph(&self, dilate: bool) -> Mask2D {
        let (h, w) = (self.height as isize, self.width as isize);
        Mask2D::from_fn(self.height, self.width, |y, x| {
            let mut acc = !dilate;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    // Outside the frame counts as background for dilation and
                    // is ignored for erosion, so borders are not eaten away.
                    if yy < 0 || xx < 0 || yy >= h || xx >= w {
                        continue;
                    }
                    let v = self.get(yy as usize, xx as usize);
                    if dilate {
                        acc |= v;
                    } else {
                        acc &= v;
                    }
                }
            }
            acc
        })
    }

    pub fn erode3(&self) -> Mask2D {
        self.morph(false)
    }

    pub fn dilate3(&self) -> Mask2D {
        self.morph(true)
    }

    /// 3x3 opening followed by 3x3 closing.
    pub fn open_close3(&self) -> Mask2D {
        self.erode3().dilate3().dilate3().erode3()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::from_vec(vec![1, 2], vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, DataError::NonFiniteData));
    }

    #[test]
    fn rejects_wrong_length() {
        let err = Tensor::from_vec(vec![2, 2], vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, DataError::DimMismatch { expected: 4, found: 3 }));
    }

    #[test]
    fn bilinear_interpolates_and_bounds() {
        let t = Tensor::from_fn(2, 2, 1, |y, x, _| (y * 2 + x) as f64);
        assert_eq!(t.bilinear(0.5, 0.5, 0), Some(1.5));
        assert_eq!(t.bilinear(1.0, 1.0, 0), Some(3.0));
        assert_eq!(t.bilinear(1.01, 0.0, 0), None);
        assert_eq!(t.bilinear(-0.01, 0.0, 0), None);
    }

    #[test]
    fn open_close_removes_speckle_keeps_blob() {
        let mut m = Mask2D::new(12, 12);
        m.set(1, 1, true);
        for y in 5..10 {
            for x in 5..10 {
                m.set(y, x, true);
            }
        }
        let out = m.open_close3();
        assert!(!out.get(1, 1));
        assert_eq!(out.count(), 25);
    }

    #[test]
    fn iou_of_disjoint_is_zero() {
        let a = Mask2D::from_fn(4, 4, |_, x| x < 2);
        assert_eq!(a.iou(&a.not()), 0.0);
        assert_eq!(a.iou(&a), 1.0);
    }
}
