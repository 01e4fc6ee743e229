//! Separable 1-D kernels and order statistics used by the detector and the
//! fitter.

/// Sampled Gaussian, normalized to unit sum. `sigma <= 0` yields the
/// identity kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.5 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Sampled second derivative of a Gaussian.
///
/// Corrected to zero sum (constants map to zero) and scaled so that
/// `sum k[i] * i^2 / 2 == 1`, i.e. the kernel reproduces `f'' = 1` on
/// `f(x) = x^2 / 2`.
pub fn gaussian_second_derivative_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(2.0) as i64;
    let s2 = sigma * sigma;
    let g: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * s2)).exp())
        .collect();
    let gsum: f64 = g.iter().sum();
    let mut k: Vec<f64> = (-radius..=radius)
        .zip(&g)
        .map(|(i, gi)| ((i * i) as f64 / (s2 * s2) - 1.0 / s2) * gi / gsum)
        .collect();
    // Remove the residual DC component proportionally to the envelope.
    let dc: f64 = k.iter().sum();
    for (v, gi) in k.iter_mut().zip(&g) {
        *v -= dc * gi / gsum;
    }
    let moment: f64 = (-radius..=radius)
        .zip(&k)
        .map(|(i, v)| v * (i * i) as f64 / 2.0)
        .sum();
    k.iter_mut().for_each(|v| *v /= moment);
    k
}

/// Half-sample symmetric index reflection into `0..n`.
#[inline]
pub fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Convolves `src` with an odd-length centered `kernel` using reflected
/// borders.
pub fn convolve_reflect(src: &[f64], kernel: &[f64], dst: &mut [f64]) {
    let n = src.len();
    let r = (kernel.len() / 2) as i64;
    for (x, out) in dst.iter_mut().enumerate() {
        let xi = x as i64;
        let mut acc = 0.0;
        if xi >= r && xi + r < n as i64 {
            let start = (xi - r) as usize;
            for (k, s) in kernel.iter().zip(&src[start..start + kernel.len()]) {
                acc += k * s;
            }
        } else {
            for (j, k) in kernel.iter().enumerate() {
                acc += k * src[reflect(xi + j as i64 - r, n)];
            }
        }
        *out = acc;
    }
}

/// Convolves with zero padding outside `0..n`.
pub fn convolve_zero(src: &[f64], kernel: &[f64], dst: &mut [f64]) {
    let n = src.len() as i64;
    let r = (kernel.len() / 2) as i64;
    for (x, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, k) in kernel.iter().enumerate() {
            let i = x as i64 + j as i64 - r;
            if (0..n).contains(&i) {
                acc += k * src[i as usize];
            }
        }
        *out = acc;
    }
}

/// Linearly interpolated percentile (`p` in `[0, 100]`) of `values`.
/// Reorders `values` in place.
pub fn percentile_in_place(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty slice");
    let n = values.len();
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut a, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return a;
    }
    let b = rest.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

/// Median of a slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    percentile_in_place(&mut v, 50.0)
}
