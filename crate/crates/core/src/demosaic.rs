//! Filling the two missing channels of every stripe column.
//!
//! Two families are provided. The baselines interpolate each channel along
//! the row directly from its valid columns. The convex colorizer instead
//! writes every missing value as a non-negative, sum-to-one combination of
//! the six nearest valid samples of the same channel, with weights from an
//! analytic kernel or from an externally produced coefficient tensor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{CoeffTensor, RgbRaster, NEIGHBORS};
use crate::stripe::{Channel, ChannelOrder, StripeImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Nearest,
    Linear,
    /// Catmull-Rom; may overshoot the neighbor range.
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Nearest,
    Linear,
    /// Catmull-Rom weights with negative lobes clamped and renormalized.
    ConvexCubic,
}

#[derive(Debug, Clone)]
pub enum WeightSource {
    Analytic(KernelKind),
    External(CoeffTensor),
}

/// Up to six nearest same-channel columns for every (column, channel),
/// nearest first, left before right on ties. Columns carrying the channel
/// list only themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    width: usize,
    order: ChannelOrder,
    entries: Vec<[Vec<usize>; 3]>,
}

impl NeighborIndex {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn order(&self) -> ChannelOrder {
        self.order
    }

    /// Neighbor columns of `column` for `channel`.
    pub fn get(&self, column: usize, channel: Channel) -> &[usize] {
        &self.entries[column][channel.index()]
    }
}

pub fn build_neighbor_index(width: usize, order: ChannelOrder) -> Result<NeighborIndex> {
    if width < 9 || width % 3 != 0 {
        return Err(Error::BadDimensions {
            height: 0,
            width,
            reason: "stripe width must be a multiple of 3 and at least 9",
        });
    }
    let entries = (0..width)
        .map(|c| {
            let mut per_channel: [Vec<usize>; 3] = Default::default();
            for slot in 0..3 {
                let ch = order.channel_at(slot);
                per_channel[ch.index()] = if c % 3 == slot {
                    vec![c]
                } else {
                    let mut cand: Vec<usize> = (slot..width).step_by(3).collect();
                    // Distance first; on ties the left column (smaller index) wins.
                    cand.sort_by_key(|&x| (x.abs_diff(c), x));
                    cand.truncate(NEIGHBORS);
                    cand
                };
            }
            per_channel
        })
        .collect();
    Ok(NeighborIndex {
        width,
        order,
        entries,
    })
}

/// Catmull-Rom weights for samples at offsets -1, 0, 1, 2 evaluated at
/// fraction `t` between samples 0 and 1.
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Per-channel 1-D interpolation across the valid columns of each row.
pub fn fill_baseline(stripe: &StripeImage, kind: BaselineKind) -> RgbRaster {
    let (height, width) = stripe.dims();
    let order = stripe.order();
    let mut data = vec![0.0f64; height * width * 3];
    data.par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(h, out)| {
            let row = stripe.row(h);
            for slot in 0..3 {
                let ch = order.channel_at(slot).index();
                let xs: Vec<usize> = (slot..width).step_by(3).collect();
                let n = xs.len();
                let vs: Vec<f64> = xs.iter().map(|&x| row[x]).collect();
                for c in 0..width {
                    let v = if c <= xs[0] {
                        vs[0]
                    } else if c >= xs[n - 1] {
                        vs[n - 1]
                    } else {
                        // xs[j] < c < xs[j + 1] or c == xs[j].
                        let j = (c - slot) / 3;
                        let t = (c - xs[j]) as f64 / (xs[j + 1] - xs[j]) as f64;
                        match kind {
                            BaselineKind::Nearest => {
                                if t <= 0.5 {
                                    vs[j]
                                } else {
                                    vs[j + 1]
                                }
                            }
                            BaselineKind::Linear => (1.0 - t) * vs[j] + t * vs[j + 1],
                            BaselineKind::Cubic => {
                                let at = |i: i64| vs[i.clamp(0, n as i64 - 1) as usize];
                                let j = j as i64;
                                let w = catmull_rom(t);
                                w[0] * at(j - 1) + w[1] * at(j) + w[2] * at(j + 1) + w[3] * at(j + 2)
                            }
                        }
                    };
                    out[c * 3 + ch] = v.clamp(0.0, 1.0);
                }
            }
        });
    RgbRaster::new(height, width, data).expect("interpolated values are finite")
}

/// Analytic weights aligned with `neighbors` for output column `c`.
fn kernel_weights(kind: KernelKind, c: usize, neighbors: &[usize]) -> [f64; NEIGHBORS] {
    let mut w = [0.0; NEIGHBORS];
    if neighbors.len() == 1 {
        w[0] = 1.0;
        return w;
    }
    // Neighbor list positions on each side, nearest first.
    let left: Vec<usize> = (0..neighbors.len()).filter(|&i| neighbors[i] < c).collect();
    let right: Vec<usize> = (0..neighbors.len()).filter(|&i| neighbors[i] > c).collect();
    if kind == KernelKind::Nearest || left.is_empty() || right.is_empty() {
        w[0] = 1.0;
        return w;
    }
    let (l1, r1) = (left[0], right[0]);
    let dl = (c - neighbors[l1]) as f64;
    let dr = (neighbors[r1] - c) as f64;
    let t = dl / (dl + dr);
    match kind {
        KernelKind::Linear => {
            w[l1] = 1.0 - t;
            w[r1] = t;
        }
        KernelKind::ConvexCubic => {
            let l2 = left.get(1).copied().unwrap_or(l1);
            let r2 = right.get(1).copied().unwrap_or(r1);
            let cr = catmull_rom(t);
            for (pos, weight) in [l2, l1, r1, r2].into_iter().zip(cr) {
                w[pos] += weight;
            }
            w.iter_mut().for_each(|v| *v = v.max(0.0));
            let sum: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= sum);
        }
        KernelKind::Nearest => unreachable!(),
    }
    w
}

/// Restricts tensor weights to the available neighbors and renormalizes;
/// falls back to the nearest neighbor when no mass remains.
fn restrict(weights: &[f64], count: usize) -> [f64; NEIGHBORS] {
    let mut w = [0.0; NEIGHBORS];
    w[..count].copy_from_slice(&weights[..count]);
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        if count < NEIGHBORS {
            w.iter_mut().for_each(|v| *v /= sum);
        }
    } else {
        w[0] = 1.0;
    }
    w
}

/// Convex-combination colorization with weights from `src`.
pub fn fill_convex(stripe: &StripeImage, src: &WeightSource) -> Result<RgbRaster> {
    let (height, width) = stripe.dims();
    let index = build_neighbor_index(width, stripe.order())?;
    if let WeightSource::External(t) = src {
        if t.dims() != stripe.dims() {
            return Err(Error::TensorDimMismatch {
                tensor: t.dims(),
                stripe: stripe.dims(),
            });
        }
    }
    let analytic: Option<Vec<[[f64; NEIGHBORS]; 3]>> = match src {
        WeightSource::Analytic(kind) => Some(
            (0..width)
                .map(|c| {
                    Channel::ALL.map(|ch| kernel_weights(*kind, c, index.get(c, ch)))
                })
                .collect(),
        ),
        WeightSource::External(_) => None,
    };

    let mut data = vec![0.0f64; height * width * 3];
    data.par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(h, out)| {
            let row = stripe.row(h);
            for c in 0..width {
                for ch in Channel::ALL {
                    let nbrs = index.get(c, ch);
                    let v = if nbrs.len() == 1 && nbrs[0] == c {
                        row[c]
                    } else {
                        let w = match (&analytic, src) {
                            (Some(a), _) => a[c][ch.index()],
                            (None, WeightSource::External(t)) => restrict(t.get(h, c, ch.index()), nbrs.len()),
                            _ => unreachable!(),
                        };
                        nbrs.iter().zip(&w).map(|(&n, &wk)| wk * row[n]).sum()
                    };
                    out[c * 3 + ch.index()] = v;
                }
            }
        });
    RgbRaster::new(height, width, data)
}

/// `(min, max)` of the stripe values that `fill_convex` may combine at
/// `(h, c)` for `channel`.
pub fn neighbor_hull(
    stripe: &StripeImage,
    index: &NeighborIndex,
    h: usize,
    c: usize,
    channel: Channel,
) -> (f64, f64) {
    index
        .get(c, channel)
        .iter()
        .map(|&n| stripe.get(h, n))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}
