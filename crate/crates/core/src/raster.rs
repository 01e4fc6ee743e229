//! Image and tensor value types shared by every stage.
//!
//! Scalar rasters store `f32` samples so that they round-trip bit-exactly
//! through the LFR file format. Color data and coefficient weights are kept in
//! `f64` because they feed convex combinations whose sums must be exact to
//! well below `f32` precision.

use crate::error::{Error, Result};

/// Minimum side length of a scan.
pub const MIN_SCAN_SIDE: usize = 8;

/// Weights per (pixel, channel) in a coefficient tensor.
pub const NEIGHBORS: usize = 6;

/// Values per pixel in a coefficient tensor (3 channels x 6 weights).
pub const COEFF_INNER: usize = 3 * NEIGHBORS;

/// Tolerance on the weight sum accepted before renormalization.
pub const SIMPLEX_TOLERANCE: f64 = 1e-3;

fn check_unit_range(data: &[f32]) -> Result<()> {
    for (index, &v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { index });
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::RangeViolation {
                index,
                value: f64::from(v),
            });
        }
    }
    Ok(())
}

fn check_len(height: usize, width: usize, per_pixel: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::BadDimensions {
            height,
            width,
            reason: "empty raster",
        });
    }
    if height * width * per_pixel != len {
        return Err(Error::Malformed(format!(
            "{height}x{width}x{per_pixel} raster needs {} samples, got {len}",
            height * width * per_pixel
        )));
    }
    Ok(())
}

/// A grayscale scan with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayRaster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_len(height, width, 1, data.len())?;
        if height < MIN_SCAN_SIDE || width < MIN_SCAN_SIDE {
            return Err(Error::BadDimensions {
                height,
                width,
                reason: "scans must be at least 8x8",
            });
        }
        check_unit_range(&data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for h in 0..height {
            for x in 0..width {
                data.push(f(h, x));
            }
        }
        Self::new(height, width, data)
    }

    /// Normalizes 8-bit samples by 255.
    pub fn from_u8(height: usize, width: usize, data: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        )
    }

    /// Normalizes 16-bit samples by 65535.
    pub fn from_u16(height: usize, width: usize, data: &[u16]) -> Result<Self> {
        Self::new(
            height,
            width,
            data.iter().map(|&v| f32::from(v) / 65535.0).collect(),
        )
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, x: usize) -> f32 {
        self.data[h * self.width + x]
    }

    pub fn row(&self, h: usize) -> &[f32] {
        &self.data[h * self.width..(h + 1) * self.width]
    }

    pub fn to_u16(&self) -> Vec<u16> {
        self.data
            .iter()
            .map(|&v| (f64::from(v) * 65535.0).round() as u16)
            .collect()
    }
}

/// Per-pixel evidence in `[0, 1]` that a pixel lies on a lenticule boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LikelihoodMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_len(height, width, 1, data.len())?;
        check_unit_range(&data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for h in 0..height {
            for x in 0..width {
                data.push(f(h, x));
            }
        }
        Self::new(height, width, data)
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, x: usize) -> f32 {
        self.data[h * self.width + x]
    }

    pub fn row(&self, h: usize) -> &[f32] {
        &self.data[h * self.width..(h + 1) * self.width]
    }

    /// Mean of every column, as `f64`.
    pub fn column_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.width];
        for h in 0..self.height {
            for (a, &v) in acc.iter_mut().zip(self.row(h)) {
                *a += f64::from(v);
            }
        }
        let n = self.height as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn flip_vertical(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for h in (0..self.height).rev() {
            data.extend_from_slice(self.row(h));
        }
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// An RGB image with channels interleaved per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbRaster {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, 3, data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for h in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(h, x));
            }
        }
        Self::new(height, width, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, h: usize, x: usize) -> [f64; 3] {
        let i = (h * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn get(&self, h: usize, x: usize, ch: usize) -> f64 {
        self.data[(h * self.width + x) * 3 + ch]
    }

    pub fn map_pixels(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.data.chunks_exact(3) {
            data.extend_from_slice(&f([px[0], px[1], px[2]]));
        }
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn to_u16(&self) -> Vec<u16> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect()
    }
}

/// Six convex weights per pixel and output channel (R, G, B), nearest
/// neighbor first.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTensor {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl CoeffTensor {
    /// Validates non-negativity and a weight sum within `1 ± 1e-3`, then
    /// renormalizes every group to sum to one.
    pub fn new(height: usize, width: usize, mut weights: Vec<f64>) -> Result<Self> {
        check_len(height, width, COEFF_INNER, weights.len())?;
        for (g, group) in weights.chunks_exact_mut(NEIGHBORS).enumerate() {
            let (pixel, channel) = (g / 3, g % 3);
            if let Some(k) = group.iter().position(|w| !w.is_finite()) {
                return Err(Error::NonFiniteValue {
                    index: g * NEIGHBORS + k,
                });
            }
            let sum: f64 = group.iter().sum();
            if group.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::SimplexViolation {
                    pixel,
                    channel,
                    sum,
                });
            }
            group.iter_mut().for_each(|w| *w /= sum);
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> [f64; NEIGHBORS],
    ) -> Result<Self> {
        let mut weights = Vec::with_capacity(height * width * COEFF_INNER);
        for h in 0..height {
            for x in 0..width {
                for ch in 0..3 {
                    weights.extend_from_slice(&f(h, x, ch));
                }
            }
        }
        Self::new(height, width, weights)
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

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, h: usize, x: usize, ch: usize) -> &[f64] {
        let i = ((h * self.width + x) * 3 + ch) * NEIGHBORS;
        &self.weights[i..i + NEIGHBORS]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_rejects_small_and_out_of_range() {
        assert!(matches!(
            GrayRaster::new(4, 8, vec![0.0; 32]),
            Err(Error::BadDimensions { .. })
        ));
        let mut data = vec![0.5; 64];
        data[10] = 1.5;
        assert!(matches!(
            GrayRaster::new(8, 8, data),
            Err(Error::RangeViolation { index: 10, .. })
        ));
        let mut data = vec![0.5; 64];
        data[3] = f32::NAN;
        assert!(matches!(
            GrayRaster::new(8, 8, data),
            Err(Error::NonFiniteValue { index: 3 })
        ));
    }

    #[test]
    fn integer_normalization() {
        let g = GrayRaster::from_u16(8, 8, &[65535; 64]).unwrap();
        assert_eq!(g.get(3, 3), 1.0);
        let g = GrayRaster::from_u8(8, 8, &[0; 64]).unwrap();
        assert_eq!(g.get(0, 0), 0.0);
    }

    #[test]
    fn coeff_renormalizes_small_deviation() {
        let mut w = vec![0.0; COEFF_INNER];
        for ch in 0..3 {
            w[ch * NEIGHBORS] = 0.6003;
            w[ch * NEIGHBORS + 1] = 0.4002;
        }
        let t = CoeffTensor::new(1, 1, w).unwrap();
        for ch in 0..3 {
            let s: f64 = t.get(0, 0, ch).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coeff_rejects_negative_and_far_sums() {
        let mut w = vec![0.0; COEFF_INNER];
        for ch in 0..3 {
            w[ch * NEIGHBORS] = 1.0;
        }
        w[1] = -0.01;
        w[0] = 1.01;
        assert!(matches!(
            CoeffTensor::new(1, 1, w),
            Err(Error::SimplexViolation { .. })
        ));
        let mut w = vec![0.0; COEFF_INNER];
        for ch in 0..3 {
            w[ch * NEIGHBORS] = 1.01;
        }
        assert!(matches!(
            CoeffTensor::new(1, 1, w),
            Err(Error::SimplexViolation { .. })
        ));
    }
}
