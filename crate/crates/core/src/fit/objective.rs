//! Regularized line-overlap objective and its analytic gradient.
//!
//! Parameters are laid out as `p = (t_0 .. t_{M-1}, b_0 .. b_{M-1})`.

use crate::filter::{convolve_zero, gaussian_kernel};
use crate::raster::LikelihoodMap;

/// Values of the individual objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terms {
    pub data: f64,
    pub r1: f64,
    pub r2: f64,
    pub total: f64,
}

/// `sum_i (p[i+1] - p[i] - w)^2`
pub(crate) fn first_difference_penalty(p: &[f64], w_hat: f64) -> f64 {
    p.windows(2).map(|s| (s[1] - s[0] - w_hat).powi(2)).sum()
}

/// `sum_i (p[i] - 2 p[i+1] + p[i+2])^2`
pub(crate) fn second_difference_penalty(p: &[f64]) -> f64 {
    p.windows(3).map(|s| (s[0] - 2.0 * s[1] + s[2]).powi(2)).sum()
}

/// Adds `scale * 2 D^T (D p - w)` to `grad`.
fn add_first_difference_gradient(p: &[f64], w_hat: f64, scale: f64, grad: &mut [f64]) {
    for i in 0..p.len().saturating_sub(1) {
        let d = 2.0 * scale * (p[i + 1] - p[i] - w_hat);
        grad[i] -= d;
        grad[i + 1] += d;
    }
}

/// Adds `scale * 2 H^T H p` to `grad`.
fn add_second_difference_gradient(p: &[f64], scale: f64, grad: &mut [f64]) {
    for i in 0..p.len().saturating_sub(2) {
        let e = 2.0 * scale * (p[i] - 2.0 * p[i + 1] + p[i + 2]);
        grad[i] += e;
        grad[i + 1] -= 2.0 * e;
        grad[i + 2] += e;
    }
}

/// The likelihood map prepared for sub-pixel sampling.
#[derive(Debug, Clone)]
pub struct LineObjective {
    height: usize,
    width: usize,
    z: Vec<f64>,
    pub(crate) w_hat: f64,
    pub(crate) lambda1: f64,
    pub(crate) lambda2: f64,
}

impl LineObjective {
    /// Smooths every row of `map` with a Gaussian of `smooth_sigma` px
    /// (zero outside the image) and stores it for bilinear sampling.
    pub fn new(map: &LikelihoodMap, smooth_sigma: f64, w_hat: f64, lambda1: f64, lambda2: f64) -> Self {
        let (height, width) = map.dims();
        let kernel = gaussian_kernel(smooth_sigma);
        let mut z = vec![0.0; height * width];
        let mut row = vec![0.0; width];
        for h in 0..height {
            for (r, &v) in row.iter_mut().zip(map.row(h)) {
                *r = f64::from(v);
            }
            convolve_zero(&row, &kernel, &mut z[h * width..(h + 1) * width]);
        }
        Self {
            height,
            width,
            z,
            w_hat,
            lambda1,
            lambda2,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Bilinear sample of row `h` at `x` and its x-derivative; zero outside
    /// the image.
    #[inline]
    fn sample(&self, row: &[f64], x: f64) -> (f64, f64) {
        let xf = x.floor();
        let i = xf as i64;
        let f = x - xf;
        let w = self.width as i64;
        let at = |j: i64| if (0..w).contains(&j) { row[j as usize] } else { 0.0 };
        let v0 = at(i);
        let v1 = at(i + 1);
        (v0 + f * (v1 - v0), v1 - v0)
    }

    #[inline]
    fn row_fraction(&self, h: usize) -> f64 {
        if self.height < 2 {
            0.0
        } else {
            h as f64 / (self.height - 1) as f64
        }
    }

    /// `-sum_m sum_h z(h, x_m(h))`
    pub fn data_term(&self, p: &[f64]) -> f64 {
        let m = p.len() / 2;
        let (t, b) = p.split_at(m);
        let mut sum = 0.0;
        for h in 0..self.height {
            let s = self.row_fraction(h);
            let row = &self.z[h * self.width..(h + 1) * self.width];
            for k in 0..m {
                sum += self.sample(row, t[k] + s * (b[k] - t[k])).0;
            }
        }
        -sum
    }

    pub fn terms(&self, p: &[f64]) -> Terms {
        let m = p.len() / 2;
        let (t, b) = p.split_at(m);
        let data = self.data_term(p);
        let r1 = first_difference_penalty(t, self.w_hat) + first_difference_penalty(b, self.w_hat);
        let r2 = second_difference_penalty(t) + second_difference_penalty(b);
        Terms {
            data,
            r1,
            r2,
            total: data + self.lambda1 * r1 + self.lambda2 * r2,
        }
    }

    /// Objective value; writes the gradient into `grad`.
    pub fn value_and_gradient(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let m = p.len() / 2;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (t, b) = p.split_at(m);
        let mut data = 0.0;
        {
            let (gt, gb) = grad.split_at_mut(m);
            for h in 0..self.height {
                let s = self.row_fraction(h);
                let row = &self.z[h * self.width..(h + 1) * self.width];
                for k in 0..m {
                    let (v, dv) = self.sample(row, t[k] + s * (b[k] - t[k]));
                    data += v;
                    gt[k] -= (1.0 - s) * dv;
                    gb[k] -= s * dv;
                }
            }
        }
        let (gt, gb) = grad.split_at_mut(m);
        add_first_difference_gradient(t, self.w_hat, self.lambda1, gt);
        add_first_difference_gradient(b, self.w_hat, self.lambda1, gb);
        add_second_difference_gradient(t, self.lambda2, gt);
        add_second_difference_gradient(b, self.lambda2, gb);

        let r1 = first_difference_penalty(t, self.w_hat) + first_difference_penalty(b, self.w_hat);
        let r2 = second_difference_penalty(t) + second_difference_penalty(b);
        -data + self.lambda1 * r1 + self.lambda2 * r2
    }
}
