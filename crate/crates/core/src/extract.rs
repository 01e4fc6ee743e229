//! Extraction of the color bands inside each lenticule into a striped image,
//! followed by vertical denoising and resampling to the scan's aspect ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LenticuleGrid;
use crate::raster::GrayRaster;
use crate::stripe::{ChannelOrder, StripeImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleFilter {
    Nearest,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub channel_order: ChannelOrder,
    /// Fraction of the lenticule width dropped next to each boundary.
    pub boundary_margin: f64,
    /// Vertical median window (odd).
    pub median_k: usize,
    pub resample_filter: ResampleFilter,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            channel_order: ChannelOrder::RGB,
            boundary_margin: 0.1,
            median_k: 3,
            resample_filter: ResampleFilter::Linear,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.2).contains(&self.boundary_margin) {
            return Err(Error::Config(format!(
                "boundary_margin {} is outside [0, 0.2]",
                self.boundary_margin
            )));
        }
        if self.median_k == 0 || self.median_k % 2 == 0 {
            return Err(Error::Config(format!(
                "median_k {} must be odd and >= 1",
                self.median_k
            )));
        }
        Ok(())
    }
}

/// Mean of `row` over `[a, b]`, treating pixel `j` as covering
/// `[j - 0.5, j + 0.5]`.
fn area_mean(row: &[f32], a: f64, b: f64) -> f64 {
    let lo_edge = -0.5;
    let hi_edge = row.len() as f64 - 0.5;
    let a = a.max(lo_edge);
    let b = b.min(hi_edge);
    if b <= a {
        // Degenerate band: sample the pixel under its center.
        let c = (0.5 * (a + b)).round().clamp(0.0, (row.len() - 1) as f64) as usize;
        return f64::from(row[c]);
    }
    let first = (a + 0.5).floor().max(0.0) as usize;
    let last = ((b + 0.5).ceil() as usize).min(row.len());
    let mut acc = 0.0;
    let mut total = 0.0;
    for (j, &v) in row.iter().enumerate().take(last).skip(first) {
        let lo = (j as f64 - 0.5).max(a);
        let hi = (j as f64 + 0.5).min(b);
        let w = hi - lo;
        if w > 0.0 {
            acc += w * f64::from(v);
            total += w;
        }
    }
    if total > 0.0 {
        acc / total
    } else {
        f64::from(row[first.min(row.len() - 1)])
    }
}

/// Band edges `[a_0, a_1, a_2, a_3]` of a lenticule spanning `[left, right]`.
#[inline]
pub fn band_edges(left: f64, right: f64, margin: f64) -> [f64; 4] {
    let inset = margin * (right - left);
    let a = left + inset;
    let step = (right - left - 2.0 * inset) / 3.0;
    [a, a + step, a + 2.0 * step, a + 3.0 * step]
}

/// Builds the `H x 3 (M - 1)` striped image from `scan`.
pub fn extract_stripes(
    scan: &GrayRaster,
    grid: &LenticuleGrid,
    cfg: &ExtractConfig,
) -> Result<StripeImage> {
    cfg.validate()?;
    if grid.dims() != scan.dims() {
        return Err(Error::GridImageMismatch {
            grid: grid.dims(),
            scan: scan.dims(),
        });
    }
    if grid.len() < 2 {
        return Err(Error::InvalidGrid("need at least two boundaries".into()));
    }
    let (height, _) = scan.dims();
    let width = 3 * (grid.len() - 1);
    let mut data = vec![0.0f64; height * width];
    data.par_chunks_mut(width).enumerate().for_each(|(h, out)| {
        let row = scan.row(h);
        for m in 0..grid.len() - 1 {
            let edges = band_edges(grid.position(m, h), grid.position(m + 1, h), cfg.boundary_margin);
            for band in 0..3 {
                out[3 * m + band] = area_mean(row, edges[band], edges[band + 1]).clamp(0.0, 1.0);
            }
        }
    });
    StripeImage::new(height, width, cfg.channel_order, data)
}

/// Per-column running median over `k` rows; windows are truncated at the
/// top and bottom edges.
pub fn median_filter_vertical(stripe: &StripeImage, k: usize) -> Result<StripeImage> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("median window {k} must be odd")));
    }
    if k == 1 {
        return Ok(stripe.clone());
    }
    let (height, width) = stripe.dims();
    let r = k / 2;
    let columns: Vec<Vec<f64>> = (0..width)
        .into_par_iter()
        .map(|c| {
            let col = stripe.column(c);
            let mut window = Vec::with_capacity(k);
            (0..height)
                .map(|h| {
                    let lo = h.saturating_sub(r);
                    let hi = (h + r + 1).min(height);
                    window.clear();
                    window.extend_from_slice(&col[lo..hi]);
                    window.sort_unstable_by(f64::total_cmp);
                    let n = window.len();
                    if n % 2 == 1 {
                        window[n / 2]
                    } else {
                        0.5 * (window[n / 2 - 1] + window[n / 2])
                    }
                })
                .collect()
        })
        .collect();
    let mut data = vec![0.0; height * width];
    for (c, col) in columns.iter().enumerate() {
        for (h, &v) in col.iter().enumerate() {
            data[h * width + c] = v;
        }
    }
    StripeImage::new(height, width, stripe.order(), data)
}

/// Output height that restores the scan's aspect ratio:
/// `round(3 (M - 1) H / W)`, rounding halves away from zero.
pub fn resampled_height(stripe_width: usize, height: usize, scan_width: usize) -> usize {
    (stripe_width as f64 * height as f64 / scan_width as f64).round() as usize
}

/// Per-row source weights for resampling `src_len` samples to `dst_len`.
fn resample_weights(src_len: usize, dst_len: usize, filter: ResampleFilter) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            match filter {
                ResampleFilter::Nearest => {
                    let j = center.round().clamp(0.0, (src_len - 1) as f64) as usize;
                    vec![(j, 1.0)]
                }
                ResampleFilter::Linear => {
                    // Triangle filter, widened when shrinking.
                    let support = scale.max(1.0);
                    let lo = (center - support).floor().max(0.0) as usize;
                    let hi = ((center + support).ceil() as usize).min(src_len - 1);
                    let mut taps: Vec<(usize, f64)> = (lo..=hi)
                        .filter_map(|j| {
                            let w = 1.0 - (j as f64 - center).abs() / support;
                            (w > 0.0).then_some((j, w))
                        })
                        .collect();
                    if taps.is_empty() {
                        let j = center.round().clamp(0.0, (src_len - 1) as f64) as usize;
                        taps.push((j, 1.0));
                    }
                    let sum: f64 = taps.iter().map(|t| t.1).sum();
                    taps.iter_mut().for_each(|t| t.1 /= sum);
                    taps
                }
            }
        })
        .collect()
}

/// Resamples every column to `round(3 (M - 1) H / W)` rows, where `W` is the
/// width of the scan the stripes were extracted from.
pub fn resample_vertical(
    stripe: &StripeImage,
    scan_width: usize,
    filter: ResampleFilter,
) -> Result<StripeImage> {
    let (height, width) = stripe.dims();
    let target = resampled_height(width, height, scan_width);
    if target < 8 {
        return Err(Error::DegenerateOutput(target));
    }
    let weights = resample_weights(height, target, filter);
    let mut data = vec![0.0f64; target * width];
    data.par_chunks_mut(width)
        .zip(weights.par_iter())
        .for_each(|(out, taps)| {
            for &(j, w) in taps {
                for (o, &v) in out.iter_mut().zip(stripe.row(j)) {
                    *o += w * v;
                }
            }
            out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        });
    StripeImage::new(target, width, stripe.order(), data)
}

/// Extraction, vertical median and resampling in sequence.
pub fn stripe_pipeline(
    scan: &GrayRaster,
    grid: &LenticuleGrid,
    cfg: &ExtractConfig,
) -> Result<StripeImage> {
    let stripes = extract_stripes(scan, grid, cfg)?;
    let filtered = median_filter_vertical(&stripes, cfg.median_k)?;
    resample_vertical(&filtered, scan.width(), cfg.resample_filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_for(width: usize, height: usize, spacing: f64, start: f64) -> LenticuleGrid {
        let mut t = Vec::new();
        let mut x = start;
        while x <= (width - 1) as f64 {
            t.push(x);
            x += spacing;
        }
        LenticuleGrid::vertical(t, height, width).unwrap()
    }

    #[test]
    fn constant_scan_gives_constant_stripes() {
        let scan = GrayRaster::new(40, 64, vec![0.5; 40 * 64]).unwrap();
        let grid = LenticuleGrid::new(
            vec![2.3, 17.9, 33.1, 50.0],
            vec![2.9, 18.2, 33.9, 50.4],
            40,
            64,
        )
        .unwrap();
        let s = extract_stripes(&scan, &grid, &ExtractConfig::default()).unwrap();
        assert_eq!(s.width(), 9);
        assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn width_is_three_per_lenticule() {
        let scan = GrayRaster::new(8, 100, vec![0.1; 800]).unwrap();
        for spacing in [10.0, 13.5, 20.0] {
            let grid = grid_for(100, 8, spacing, 1.0);
            let s = extract_stripes(&scan, &grid, &ExtractConfig::default()).unwrap();
            assert_eq!(s.width(), 3 * (grid.len() - 1));
        }
    }

    #[test]
    fn grid_scan_mismatch() {
        let scan = GrayRaster::new(8, 100, vec![0.1; 800]).unwrap();
        let grid = grid_for(90, 8, 10.0, 1.0);
        assert!(matches!(
            extract_stripes(&scan, &grid, &ExtractConfig::default()),
            Err(Error::GridImageMismatch { .. })
        ));
    }

    #[test]
    fn area_mean_partial_pixels() {
        let row = [0.0f32, 1.0, 0.0, 1.0];
        // Pixel j covers [j - 0.5, j + 0.5]: [0.25, 1.25] is a quarter of
        // pixel 0 and three quarters of pixel 1.
        assert!((area_mean(&row, 0.25, 1.25) - 0.75).abs() < 1e-12);
        assert!((area_mean(&row, 0.5, 1.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_removes_spike() {
        let mut col = vec![0.5; 9];
        col[4] = 0.9;
        let s = StripeImage::from_fn(9, 3, ChannelOrder::RGB, |h, _| col[h]).unwrap();
        let f = median_filter_vertical(&s, 3).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.5));
        assert_eq!(median_filter_vertical(&s, 1).unwrap(), s);
        assert!(median_filter_vertical(&s, 2).is_err());
    }

    #[test]
    fn resampled_height_of_full_frame() {
        assert_eq!(resampled_height(3 * 230, 3650, 2550), 988);
    }

    #[test]
    fn resample_constant_and_identity() {
        let s = StripeImage::from_fn(40, 12, ChannelOrder::RGB, |_, _| 0.3).unwrap();
        let r = resample_vertical(&s, 24, ResampleFilter::Linear).unwrap();
        assert_eq!(r.height(), 20);
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));

        let s = StripeImage::from_fn(40, 12, ChannelOrder::RGB, |h, c| ((h * 7 + c) % 11) as f64 / 10.0)
            .unwrap();
        let same = resample_vertical(&s, 12, ResampleFilter::Nearest).unwrap();
        assert_eq!(same, s);
    }

    #[test]
    fn resample_rejects_tiny_output() {
        let s = StripeImage::from_fn(40, 6, ChannelOrder::RGB, |_, _| 0.3).unwrap();
        assert!(matches!(
            resample_vertical(&s, 100, ResampleFilter::Linear),
            Err(Error::DegenerateOutput(2))
        ));
    }

    proptest! {
        #[test]
        fn extraction_is_range_bounded_and_scale_equivariant(
            seed in proptest::collection::vec(0.0f32..=1.0, 64 * 80),
            a in 0.05f64..=1.0,
            start in 0.0f64..5.0,
            spacing in 9.0f64..17.0,
        ) {
            let scan = GrayRaster::new(64, 80, seed.clone()).unwrap();
            let scaled = GrayRaster::new(64, 80, seed.iter().map(|&v| (f64::from(v) * a) as f32).collect()).unwrap();
            let grid = grid_for(80, 64, spacing, start);
            let cfg = ExtractConfig::default();
            let s = extract_stripes(&scan, &grid, &cfg).unwrap();
            let s2 = extract_stripes(&scaled, &grid, &cfg).unwrap();
            let lo = seed.iter().copied().fold(1.0f32, f32::min) as f64;
            let hi = seed.iter().copied().fold(0.0f32, f32::max) as f64;
            for (&v, &w) in s.data().iter().zip(s2.data()) {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                prop_assert!((w - a * v).abs() < 1e-6);
            }
            let m = median_filter_vertical(&s, 3).unwrap();
            let r = resample_vertical(&m, 80, ResampleFilter::Linear).unwrap();
            prop_assert_eq!(r.width(), s.width());
            prop_assert_eq!(r.height(), resampled_height(s.width(), 64, 80));
            let (slo, shi) = s.data().iter().fold((1.0f64, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
            for &v in r.data() {
                prop_assert!(v >= slo - 1e-12 && v <= shi + 1e-12);
            }
        }
    }
}
