//! Lenticule boundary evidence and lenticule width estimation.
//!
//! Boundaries appear as dark, nearly vertical valleys. The detector takes the
//! horizontal second derivative of an anisotropically smoothed scan (a valley
//! has positive curvature), keeps the positive part and rescales it per image
//! by robust percentiles. Width is read off the dominant period of the
//! evidence in the horizontal direction.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{
    gaussian_kernel, gaussian_second_derivative_kernel, percentile_in_place, reflect,
};
use crate::raster::{GrayRaster, LikelihoodMap};

pub const MIN_SCALE: f64 = 0.5;
pub const MAX_SCALE: f64 = 5.0;
pub const MIN_PERIOD: f64 = 6.0;
pub const MAX_PERIOD: f64 = 64.0;

/// Ratio between vertical and horizontal smoothing.
const VERTICAL_ELONGATION: f64 = 4.0;
const LOW_PERCENTILE: f64 = 0.1;
const HIGH_PERCENTILE: f64 = 99.9;
const MIN_CONTRAST: f64 = 1e-6;
/// Target height of the horizontal bands whose spectra are averaged.
const SPECTRUM_BAND_ROWS: usize = 32;
/// Zero-padding factor of the width-estimation transform.
const SPECTRUM_PADDING: usize = 4;
const MAX_CONFIDENCE: f64 = 1e12;
/// Fraction of the window length covered by the two cosine tapers.
const TUKEY_TAPER: f64 = 0.25;
/// A peak at `k / n` holding this fraction of the power at `k` marks `k`
/// as a harmonic.
const SUBHARMONIC_RATIO: f64 = 0.05;
const MAX_HARMONIC: usize = 4;
/// Relative half-width of the frequency band averaged around the peak.
const CENTROID_BAND: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Horizontal smoothing scale in pixels.
    pub scale: f64,
    /// Minimum peak-to-median spectral power ratio for a width estimate.
    pub confidence_threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            confidence_threshold: 4.0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_SCALE..=MAX_SCALE).contains(&self.scale) {
            return Err(Error::ScaleOutOfRange(self.scale));
        }
        if !(self.confidence_threshold >= 0.0) {
            return Err(Error::Config("confidence_threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthEstimate {
    /// Average lenticule width in pixels.
    pub w_hat: f64,
    /// Dominant peak power over median spectral power.
    pub confidence: f64,
}

/// Ridge likelihood of `scan` at the given horizontal scale.
pub fn detect_ridges(scan: &GrayRaster, scale: f64) -> Result<LikelihoodMap> {
    if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
        return Err(Error::ScaleOutOfRange(scale));
    }
    let (height, width) = scan.dims();
    let dxx = gaussian_second_derivative_kernel(scale);
    let gy = gaussian_kernel(VERTICAL_ELONGATION * scale);

    let mut horiz = vec![0.0f64; height * width];
    horiz
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(h, out)| {
            let row: Vec<f64> = scan.row(h).iter().map(|&v| f64::from(v)).collect();
            crate::filter::convolve_reflect(&row, &dxx, out);
        });

    let r = (gy.len() / 2) as i64;
    let mut response = vec![0.0f64; height * width];
    response
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(h, out)| {
            for (j, &k) in gy.iter().enumerate() {
                let src = reflect(h as i64 + j as i64 - r, height);
                for (o, &v) in out.iter_mut().zip(&horiz[src * width..(src + 1) * width]) {
                    *o += k * v;
                }
            }
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        });
    drop(horiz);

    let mut scratch = response.clone();
    let lo = percentile_in_place(&mut scratch, LOW_PERCENTILE);
    let hi = percentile_in_place(&mut scratch, HIGH_PERCENTILE);
    drop(scratch);
    if hi - lo < MIN_CONTRAST {
        return Ok(LikelihoodMap::zeros(height, width));
    }
    let inv = 1.0 / (hi - lo);
    let data = response
        .par_iter()
        .map(|&v| ((v - lo) * inv).clamp(0.0, 1.0) as f32)
        .collect();
    LikelihoodMap::new(height, width, data)
}

/// Splits `height` rows into consecutive bands whose sizes read the same
/// forwards and backwards, so the partition is symmetric under a vertical
/// flip.
pub(crate) fn palindromic_bands(height: usize, target: usize) -> Vec<(usize, usize)> {
    let mut n = (height / target.max(1)).max(1);
    if n % 2 == 0 && (height % n) % 2 == 1 {
        n -= 1;
    }
    let base = height / n;
    let mut rem = height % n;
    let mut sizes = vec![base; n];
    if rem % 2 == 1 {
        sizes[n / 2] += 1;
        rem -= 1;
    }
    for i in 0..rem / 2 {
        sizes[i] += 1;
        sizes[n - 1 - i] += 1;
    }
    let mut start = 0;
    sizes
        .into_iter()
        .map(|s| {
            let band = (start, start + s);
            start += s;
            band
        })
        .collect()
}

/// Flat-topped window with raised-cosine tapers over `taper` of its length.
fn tukey_window(n: usize, taper: f64) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    let edge = taper * (n - 1) as f64 / 2.0;
    (0..n)
        .map(|x| {
            let d = (x as f64).min((n - 1 - x) as f64);
            if d >= edge || edge <= 0.0 {
                1.0
            } else {
                0.5 - 0.5 * (std::f64::consts::PI * d / edge).cos()
            }
        })
        .collect()
}

/// Band-averaged power spectrum of the horizontal evidence profile.
/// Returns `(fft_len, power)` with `power.len() == fft_len / 2 + 1`.
fn horizontal_power_spectrum(map: &LikelihoodMap) -> (usize, Vec<f64>) {
    let (height, width) = map.dims();
    let n_fft = width * SPECTRUM_PADDING;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let window = tukey_window(width, TUKEY_TAPER);

    let bands = palindromic_bands(height, SPECTRUM_BAND_ROWS);
    let mut power = vec![0.0f64; n_fft / 2 + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for &(start, end) in &bands {
        let mut profile = vec![0.0f64; width];
        for h in start..end {
            for (p, &v) in profile.iter_mut().zip(map.row(h)) {
                *p += f64::from(v);
            }
        }
        let rows = (end - start) as f64;
        let mean = profile.iter().sum::<f64>() / (width as f64 * rows);
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (x, (&p, &w)) in profile.iter().zip(&window).enumerate() {
            buf[x] = Complex::new((p / rows - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (acc, c) in power.iter_mut().zip(&buf) {
            *acc += c.norm_sqr();
        }
    }
    let nb = bands.len() as f64;
    power.iter_mut().for_each(|p| *p /= nb);
    (n_fft, power)
}

/// Dominant horizontal period of `map` within `[6, 64]` px.
///
/// The strongest spectral peak is replaced by a subharmonic when one carries
/// a comparable share of the power, so a train of narrow ridges reports its
/// fundamental rather than a harmonic.
pub fn estimate_width(map: &LikelihoodMap, confidence_threshold: f64) -> Result<WidthEstimate> {
    let (n_fft, power) = horizontal_power_spectrum(map);
    let nyquist = n_fft / 2;
    let k_min = ((n_fft as f64 / MAX_PERIOD).ceil() as usize).max(1);
    let k_max = ((n_fft as f64 / MIN_PERIOD).floor() as usize).min(nyquist.saturating_sub(1));
    if k_min > k_max {
        return Err(Error::NoDominantPeak {
            confidence: 0.0,
            threshold: confidence_threshold,
        });
    }
    let argmax = |lo: usize, hi: usize| {
        (lo..=hi)
            .max_by(|&a, &b| power[a].total_cmp(&power[b]))
            .expect("non-empty search range")
    };
    let mut k_peak = argmax(k_min, k_max);
    // Narrow ridges put comparable power into every harmonic; prefer the
    // lowest frequency whose power is still comparable to the strongest.
    for n in (2..=MAX_HARMONIC).rev() {
        let center = k_peak as f64 / n as f64;
        let reach = 2.0 * SPECTRUM_PADDING as f64;
        let lo = ((center - reach).floor() as usize).max(k_min);
        let hi = ((center + reach).ceil() as usize).min(k_max);
        if lo > hi {
            continue;
        }
        let k = argmax(lo, hi);
        let local_max = power[k] >= power[k - 1] && power[k] >= power[k + 1];
        if local_max && power[k] >= SUBHARMONIC_RATIO * power[k_peak] {
            k_peak = k;
            break;
        }
    }
    let peak = power[k_peak];

    let median_power = crate::filter::median(&power[1..=nyquist]);
    let confidence = if median_power > 0.0 {
        (peak / median_power).min(MAX_CONFIDENCE)
    } else if peak > 0.0 {
        MAX_CONFIDENCE
    } else {
        0.0
    };
    if !(confidence > confidence_threshold) {
        return Err(Error::NoDominantPeak {
            confidence,
            threshold: confidence_threshold,
        });
    }

    // Power-weighted centroid of a band around the peak: a drifting width
    // splits the peak into sidebands, and the centroid tracks the mean
    // frequency.
    let lo = ((k_peak as f64 * (1.0 - CENTROID_BAND)).floor() as usize).max(1);
    let hi = ((k_peak as f64 * (1.0 + CENTROID_BAND)).ceil() as usize).min(nyquist);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &p) in power.iter().enumerate().take(hi + 1).skip(lo) {
        num += k as f64 * p;
        den += p;
    }
    let w_hat = (n_fft as f64 / (num / den)).clamp(MIN_PERIOD, MAX_PERIOD);
    Ok(WidthEstimate { w_hat, confidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_image(size: usize, tilt_deg: f64) -> GrayRaster {
        // 1-px dark lines every 16 px, box-integrated so tilted lines are
        // rendered with sub-pixel accuracy.
        let slope = tilt_deg.to_radians().tan();
        GrayRaster::from_fn(size, size, |h, x| {
            let mut cover = 0.0f64;
            for k in 0..size / 16 + 2 {
                let center = 8.0 + 16.0 * k as f64 + h as f64 * slope;
                let lo = (center - 0.5).max(x as f64 - 0.5);
                let hi = (center + 0.5).min(x as f64 + 0.5);
                cover += (hi - lo).max(0.0);
            }
            (0.8 - 0.6 * cover.min(1.0)) as f32
        })
        .unwrap()
    }

    fn local_maxima(v: &[f64]) -> Vec<usize> {
        (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1] && v[i] > 0.05)
            .collect()
    }

    #[test]
    fn vertical_lines_peak_on_lines() {
        let map = detect_ridges(&line_image(256, 0.0), 1.0).unwrap();
        let peaks = local_maxima(&map.column_means());
        let expected: Vec<usize> = (0..16).map(|k| 8 + 16 * k).collect();
        assert_eq!(peaks, expected);
    }

    #[test]
    fn tilted_lines_peak_on_lines_per_row() {
        let slope = 1f64.to_radians().tan();
        let map = detect_ridges(&line_image(256, 1.0), 1.0).unwrap();
        for h in (0..256).step_by(17) {
            let row: Vec<f64> = map.row(h).iter().map(|&v| f64::from(v)).collect();
            for k in 1..15 {
                let truth = 8.0 + 16.0 * k as f64 + h as f64 * slope;
                let lo = (truth - 6.0) as usize;
                let best = (lo..lo + 12)
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap();
                assert!(
                    (best as f64 - truth).abs() <= 1.0,
                    "row {h} line {k}: peak {best} vs {truth}"
                );
            }
        }
    }

    #[test]
    fn constant_image_gives_zero_map() {
        let scan = GrayRaster::new(32, 32, vec![0.5; 1024]).unwrap();
        let map = detect_ridges(&scan, 1.0).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_is_validated() {
        let scan = GrayRaster::new(8, 8, vec![0.5; 64]).unwrap();
        assert!(matches!(detect_ridges(&scan, 0.4), Err(Error::ScaleOutOfRange(_))));
        assert!(matches!(detect_ridges(&scan, 5.5), Err(Error::ScaleOutOfRange(_))));
    }

    #[test]
    fn affine_intensity_invariance() {
        let base = line_image(64, 0.5);
        let map = detect_ridges(&base, 1.0).unwrap();
        for (a, c) in [(0.5, 0.1), (1.2, -0.1), (0.9, 0.05)] {
            let scan = GrayRaster::from_fn(64, 64, |h, x| (a * f64::from(base.get(h, x)) + c) as f32)
                .unwrap();
            let other = detect_ridges(&scan, 1.0).unwrap();
            for (p, q) in map.data().iter().zip(other.data()) {
                assert!((p - q).abs() < 1e-5, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn cosine_profile_width() {
        for h in [1, 7, 64] {
            let map = LikelihoodMap::from_fn(h, 256, |_, x| {
                (0.5 + 0.5 * (2.0 * std::f64::consts::PI * x as f64 / 16.0).cos()) as f32
            })
            .unwrap();
            let est = estimate_width(&map, 4.0).unwrap();
            assert!((est.w_hat - 16.0).abs() < 0.1, "H={h}: {}", est.w_hat);
            assert!(est.confidence > 4.0);
        }
    }

    #[test]
    fn non_integer_period() {
        let map = LikelihoodMap::from_fn(64, 300, |_, x| {
            (0.5 + 0.5 * (2.0 * std::f64::consts::PI * x as f64 / 14.3).cos()) as f32
        })
        .unwrap();
        let est = estimate_width(&map, 4.0).unwrap();
        assert!((est.w_hat - 14.3).abs() < 0.05, "{}", est.w_hat);
    }

    #[test]
    fn white_noise_has_no_dominant_peak() {
        let mut failures = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = LikelihoodMap::from_fn(256, 256, |_, _| rng.random::<f32>()).unwrap();
            if matches!(estimate_width(&map, 4.0), Err(Error::NoDominantPeak { .. })) {
                failures += 1;
            }
        }
        assert!(failures >= 95, "only {failures} of 100 rejected");
    }

    #[test]
    fn flip_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for height in [37, 64, 99, 130] {
            let map = LikelihoodMap::from_fn(height, 200, |h, x| {
                let phase = (x as f64 + h as f64 * 0.01) / 15.2;
                let base = 0.5 + 0.4 * (2.0 * std::f64::consts::PI * phase).cos();
                (base + 0.1 * rng.random::<f64>()) as f32
            })
            .unwrap();
            let a = estimate_width(&map, 4.0).unwrap();
            let b = estimate_width(&map.flip_vertical(), 4.0).unwrap();
            assert!((a.w_hat - b.w_hat).abs() < 1e-9);
            assert!((a.confidence - b.confidence).abs() < 1e-6 * a.confidence);
        }
    }

    #[test]
    fn bands_are_palindromic() {
        for h in 1..300 {
            let bands = palindromic_bands(h, 32);
            assert_eq!(bands.first().unwrap().0, 0);
            assert_eq!(bands.last().unwrap().1, h);
            let sizes: Vec<usize> = bands.iter().map(|(a, b)| b - a).collect();
            let mut rev = sizes.clone();
            rev.reverse();
            assert_eq!(sizes, rev, "height {h}");
        }
    }
}
