//! Vectorization of the boundary likelihood into straight lines.
//!
//! A peak detector on the column-mean profile gives a vertical starting
//! grid, or a sheared one once the common tilt is known; a bounded quasi-Newton solver then maximizes the likelihood
//! collected along every line, regularized toward uniform width (`r1`) and
//! smoothly varying width (`r2`).

pub mod lbfgsb;
mod objective;

use serde::{Deserialize, Serialize};

pub use objective::{LineObjective, Terms};

use crate::detect::WidthEstimate;
use crate::error::{Error, Result};
use crate::grid::LenticuleGrid;
use crate::raster::LikelihoodMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Weight of the deviation-from-mean-width penalty.
    pub lambda1: f64,
    /// Weight of the width-variation penalty.
    pub lambda2: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Horizontal Gaussian pre-smoothing of the map, in px (0 disables).
    pub smooth_sigma: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 10.0,
            max_iters: 200,
            grad_tol: 1e-6,
            smooth_sigma: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.smooth_sigma >= 0.0) {
            return Err(Error::Config("smooth_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective: f64,
    pub data_term: f64,
    pub r1: f64,
    pub r2: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitReport {
    fn from_terms(terms: Terms, iterations: usize, converged: bool) -> Self {
        Self {
            objective: terms.total,
            data_term: terms.data,
            r1: terms.r1,
            r2: terms.r2,
            iterations,
            converged,
        }
    }
}

/// `||D t - w||^2 + ||D b - w||^2`
pub fn regularizer_r1(grid: &LenticuleGrid, w_hat: f64) -> f64 {
    objective::first_difference_penalty(grid.top(), w_hat)
        + objective::first_difference_penalty(grid.bottom(), w_hat)
}

/// `||H t||^2 + ||H b||^2`
pub fn regularizer_r2(grid: &LenticuleGrid) -> f64 {
    objective::second_difference_penalty(grid.top())
        + objective::second_difference_penalty(grid.bottom())
}

fn line_objective(map: &LikelihoodMap, cfg: &FitConfig, w_hat: f64) -> LineObjective {
    LineObjective::new(map, cfg.smooth_sigma, w_hat, cfg.lambda1, cfg.lambda2)
}

fn check_dims(grid: &LenticuleGrid, map: &LikelihoodMap) -> Result<()> {
    if grid.dims() != map.dims() {
        return Err(Error::GridImageMismatch {
            grid: grid.dims(),
            scan: map.dims(),
        });
    }
    Ok(())
}

/// Evaluates the regularized objective at `grid`.
pub fn objective(
    grid: &LenticuleGrid,
    map: &LikelihoodMap,
    cfg: &FitConfig,
    w_hat: f64,
) -> Result<FitReport> {
    check_dims(grid, map)?;
    let terms = line_objective(map, cfg, w_hat).terms(&grid.to_params());
    Ok(FitReport::from_terms(terms, 0, false))
}

/// Analytic gradient with respect to `(t, b)`, length `2 M`.
pub fn objective_gradient(
    grid: &LenticuleGrid,
    map: &LikelihoodMap,
    cfg: &FitConfig,
    w_hat: f64,
) -> Result<Vec<f64>> {
    check_dims(grid, map)?;
    let p = grid.to_params();
    let mut grad = vec![0.0; p.len()];
    line_objective(map, cfg, w_hat).value_and_gradient(&p, &mut grad);
    Ok(grad)
}

/// Minimum peak separation, as a fraction of the width estimate.
const MIN_SEPARATION: f64 = 0.7;
/// Minimum prominence, as a fraction of the profile range.
const MIN_PROMINENCE: f64 = 0.1;
/// Gaps wider than this many widths get phantom boundaries.
const GAP_FACTOR: f64 = 1.5;

/// Prominence of the peak at `i`: its height above the higher of the two
/// lowest points reached before climbing to a higher sample on either side.
fn prominence(profile: &[f64], i: usize) -> f64 {
    let v = profile[i];
    let mut left_min = v;
    for &p in profile[..i].iter().rev() {
        if p > v {
            break;
        }
        left_min = left_min.min(p);
    }
    let mut right_min = v;
    for &p in &profile[i + 1..] {
        if p > v {
            break;
        }
        right_min = right_min.min(p);
    }
    v - left_min.max(right_min)
}

/// Peak positions of a 1-D profile, sub-pixel refined by a parabola through
/// the three samples around each maximum.
pub fn detect_peaks(profile: &[f64], min_separation: f64, min_prominence: f64) -> Vec<f64> {
    let n = profile.len();
    if n < 3 {
        return Vec::new();
    }
    let mut candidates: Vec<usize> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if profile[i] > profile[i - 1] {
            // Walk across a plateau and take its middle.
            let mut j = i;
            while j + 1 < n && profile[j + 1] == profile[i] {
                j += 1;
            }
            if j + 1 < n && profile[j + 1] < profile[i] {
                candidates.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    candidates.retain(|&c| prominence(profile, c) >= min_prominence);

    // Keep the highest peaks first, suppressing neighbors that are too close.
    let mut order = candidates.clone();
    order.sort_by(|&a, &b| profile[b].total_cmp(&profile[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in order {
        if kept
            .iter()
            .all(|&k| (k as f64 - c as f64).abs() >= min_separation)
        {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .map(|c| {
            let (a, b, d) = (profile[c - 1], profile[c], profile[c + 1]);
            let denom = a - 2.0 * b + d;
            let delta = if denom < 0.0 {
                (0.5 * (a - d) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            c as f64 + delta
        })
        .collect()
}

/// Peaks of `profile` with gaps wider than `GAP_FACTOR * w_hat` filled by
/// equally spaced phantom positions.
fn profile_positions(profile: &[f64], w_hat: f64) -> Result<Vec<f64>> {
    let (lo, hi) = profile
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::TooFewPeaks { found: 0 });
    }
    let peaks = detect_peaks(profile, MIN_SEPARATION * w_hat, MIN_PROMINENCE * range);

    let mut positions: Vec<f64> = Vec::with_capacity(peaks.len());
    for (i, &p) in peaks.iter().enumerate() {
        if i > 0 {
            let prev = peaks[i - 1];
            let gap = p - prev;
            if gap > GAP_FACTOR * w_hat {
                let inserts = ((gap / w_hat).round() as usize).max(2) - 1;
                let step = gap / (inserts + 1) as f64;
                positions.extend((1..=inserts).map(|k| prev + step * k as f64));
            }
        }
        positions.push(p);
    }
    if positions.len() < 4 {
        return Err(Error::TooFewPeaks {
            found: positions.len(),
        });
    }
    Ok(positions)
}

/// Vertical starting grid from the column-mean profile of `map`.
pub fn init_grid(map: &LikelihoodMap, width: &WidthEstimate) -> Result<LenticuleGrid> {
    let mut positions = profile_positions(&map.column_means(), width.w_hat)?;
    let max_x = (map.width() - 1) as f64;
    positions.iter_mut().for_each(|p| *p = p.clamp(0.0, max_x));
    LenticuleGrid::vertical(positions, map.height(), map.width())
}

/// Rows per band when profiles are shifted against each other.
const SHEAR_BAND_ROWS: usize = 32;
const MAX_SHEAR_BANDS: usize = 64;
/// Largest tilt searched by [`estimate_shear`], in degrees.
const MAX_TILT_DEG: f64 = 2.0;
const SHEAR_STEP: f64 = 0.5;
/// Overhang past the frame, as a fraction of the width, that a starting
/// line may have before it is dropped.
const EDGE_SLACK: f64 = 0.25;

/// Column-mean profiles of horizontal bands, each tagged with the
/// fractional row of its center minus one half.
fn band_profiles(map: &LikelihoodMap) -> Vec<(f64, Vec<f64>)> {
    let (height, width) = map.dims();
    let n_bands = (height / SHEAR_BAND_ROWS).clamp(1, MAX_SHEAR_BANDS);
    let span = (height - 1).max(1) as f64;
    (0..n_bands)
        .map(|j| {
            let (start, end) = (j * height / n_bands, (j + 1) * height / n_bands);
            let mut acc = vec![0.0f64; width];
            for h in start..end {
                for (a, &v) in acc.iter_mut().zip(map.row(h)) {
                    *a += f64::from(v);
                }
            }
            let n = (end - start) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            let center = 0.5 * (start + end - 1) as f64 / span - 0.5;
            (center, acc)
        })
        .collect()
}

/// Mean of the band profiles, each read along lines whose bottom end sits
/// `shear` px right of the top end. The profile is indexed by the line
/// position at mid-height; samples outside the frame take the band mean.
fn sheared_profile(bands: &[(f64, Vec<f64>)], shear: f64) -> Vec<f64> {
    let width = bands[0].1.len();
    let mut out = vec![0.0f64; width];
    for (center, profile) in bands {
        let fill = profile.iter().sum::<f64>() / width as f64;
        let offset = shear * center;
        for (x, o) in out.iter_mut().enumerate() {
            let pos = x as f64 + offset;
            *o += if pos < 0.0 || pos > (width - 1) as f64 {
                fill
            } else {
                let i = (pos.floor() as usize).min(width - 2);
                let f = pos - i as f64;
                profile[i] * (1.0 - f) + profile[i + 1] * f
            };
        }
    }
    let n = bands.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

fn profile_energy(profile: &[f64]) -> f64 {
    let mean = profile.iter().sum::<f64>() / profile.len() as f64;
    profile.iter().map(|v| (v - mean).powi(2)).sum()
}

/// Horizontal offset `b - t` shared by all boundaries: the shear that makes
/// the band profiles line up best.
pub fn estimate_shear(map: &LikelihoodMap) -> f64 {
    let (height, width) = map.dims();
    if height < 2 * SHEAR_BAND_ROWS || width < 2 {
        return 0.0;
    }
    let bands = band_profiles(map);
    let reach = (height - 1) as f64 * MAX_TILT_DEG.to_radians().tan();
    let steps = (reach / SHEAR_STEP).ceil() as i64;
    let energy = |s: f64| profile_energy(&sheared_profile(&bands, s));
    let scores: Vec<(f64, f64)> = (-steps..=steps)
        .map(|k| {
            let s = k as f64 * SHEAR_STEP;
            (s, energy(s))
        })
        .collect();
    let best = (0..scores.len())
        .max_by(|&a, &b| scores[a].1.total_cmp(&scores[b].1).then(b.cmp(&a)))
        .expect("at least one candidate");
    if best == 0 || best + 1 == scores.len() {
        return scores[best].0;
    }
    let (a, b, c) = (scores[best - 1].1, scores[best].1, scores[best + 1].1);
    let denom = a - 2.0 * b + c;
    let delta = if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    scores[best].0 + delta * SHEAR_STEP
}

/// Starting grid of parallel lines with bottom-minus-top offset `shear`,
/// found by the same peak rule as [`init_grid`] on the profile read along
/// that direction. Lines reaching more than `EDGE_SLACK * w_hat` past the
/// frame are dropped; the rest are clamped into it.
pub fn init_grid_sheared(map: &LikelihoodMap, width: &WidthEstimate, shear: f64) -> Result<LenticuleGrid> {
    if map.height() < 2 * SHEAR_BAND_ROWS {
        return init_grid(map, width);
    }
    let profile = sheared_profile(&band_profiles(map), shear);
    let positions = profile_positions(&profile, width.w_hat)?;
    let max_x = (map.width() - 1) as f64;
    let slack = EDGE_SLACK * width.w_hat;
    let inside = |v: f64| (-slack..=max_x + slack).contains(&v);
    let (t, b): (Vec<f64>, Vec<f64>) = positions
        .iter()
        .map(|&p| (p - 0.5 * shear, p + 0.5 * shear))
        .filter(|&(t, b)| inside(t) && inside(b))
        .map(|(t, b)| (t.clamp(0.0, max_x), b.clamp(0.0, max_x)))
        .unzip();
    if t.len() < 4 {
        return Err(Error::TooFewPeaks { found: t.len() });
    }
    LenticuleGrid::new(t, b, map.height(), map.width())
}

/// Refines `init` by minimizing the regularized objective inside the box
/// `[0, W - 1]`.
pub fn refine_grid(
    map: &LikelihoodMap,
    init: &LenticuleGrid,
    cfg: &FitConfig,
    w_hat: f64,
) -> Result<(LenticuleGrid, FitReport)> {
    cfg.validate()?;
    check_dims(init, map)?;
    let obj = line_objective(map, cfg, w_hat);
    let opts = lbfgsb::SolverOptions {
        max_iters: cfg.max_iters,
        grad_tol: cfg.grad_tol,
        ..Default::default()
    };
    let max_x = (map.width() - 1) as f64;
    let result = lbfgsb::minimize(
        |p, g| obj.value_and_gradient(p, g),
        &init.to_params(),
        0.0,
        max_x,
        &opts,
    )
    .map_err(|_| Error::NonFiniteObjective)?;

    let grid = LenticuleGrid::from_params_unchecked(&result.x, map.height(), map.width());
    if let Some(index) = grid.first_crossing() {
        return Err(Error::IllPosedFit { index });
    }
    grid.validate()?;
    let terms = obj.terms(&result.x);
    if !terms.total.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok((
        grid,
        FitReport::from_terms(terms, result.iterations, result.converged),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn peak_profile_map(peaks: &[f64], width: usize, height: usize) -> LikelihoodMap {
        LikelihoodMap::from_fn(height, width, |_, x| {
            peaks
                .iter()
                .map(|&p| (-(x as f64 - p).powi(2) / 2.0).exp())
                .sum::<f64>()
                .min(1.0) as f32
        })
        .unwrap()
    }

    fn width(w: f64) -> WidthEstimate {
        WidthEstimate {
            w_hat: w,
            confidence: 100.0,
        }
    }

    #[test]
    fn init_finds_clean_peaks() {
        let peaks: Vec<f64> = (0..16).map(|k| 8.0 + 16.0 * k as f64).collect();
        let map = peak_profile_map(&peaks, 256, 8);
        let grid = init_grid(&map, &width(16.0)).unwrap();
        assert_eq!(grid.len(), 16);
        for (g, p) in grid.top().iter().zip(&peaks) {
            assert!((g - p).abs() < 1e-9);
        }
        assert_eq!(grid.top(), grid.bottom());
    }

    #[test]
    fn init_fills_gaps() {
        let peaks: Vec<f64> = (0..16)
            .map(|k| 8.0 + 16.0 * k as f64)
            .filter(|&p| p != 104.0 && p != 120.0)
            .collect();
        let map = peak_profile_map(&peaks, 256, 8);
        let grid = init_grid(&map, &width(16.0)).unwrap();
        assert_eq!(grid.len(), 16);
        assert!((grid.top()[6] - 104.0).abs() <= 1.0);
        assert!((grid.top()[7] - 120.0).abs() <= 1.0);
    }

    #[test]
    fn init_rejects_flat_map() {
        let map = LikelihoodMap::zeros(16, 64);
        assert!(matches!(
            init_grid(&map, &width(16.0)),
            Err(Error::TooFewPeaks { found: 0 })
        ));
    }

    #[test]
    fn init_requires_four_boundaries() {
        let map = peak_profile_map(&[10.0, 26.0, 42.0], 64, 8);
        assert!(matches!(
            init_grid(&map, &width(16.0)),
            Err(Error::TooFewPeaks { found: 3 })
        ));
    }

    #[test]
    fn regularizers_on_examples() {
        let w = 16.0;
        let uniform: Vec<f64> = (0..4).map(|k| k as f64 * w).collect();
        let g = LenticuleGrid::vertical(uniform, 10, 64).unwrap();
        assert_eq!(regularizer_r1(&g, w), 0.0);
        assert_eq!(regularizer_r2(&g), 0.0);

        let g = LenticuleGrid::vertical(vec![0.0, 10.0, 21.0], 10, 30).unwrap();
        assert_eq!(regularizer_r1(&g, 10.0), 2.0);

        let g = LenticuleGrid::new(vec![0.0, 10.0, 22.0], vec![0.0, 10.0, 20.0], 1000, 30).unwrap();
        assert_eq!(regularizer_r2(&g), 4.0);
    }

    #[test]
    fn r1_grows_when_grid_is_scaled() {
        let t = vec![1.0, 9.0, 20.0, 28.0];
        let g = LenticuleGrid::vertical(t.clone(), 10, 80).unwrap();
        let g2 = LenticuleGrid::vertical(t.iter().map(|v| v * 2.0).collect(), 10, 80).unwrap();
        assert!(regularizer_r1(&g2, 9.0) > regularizer_r1(&g, 9.0));
    }

    #[test]
    fn r2_ignores_offsets() {
        let g = LenticuleGrid::new(vec![1.0, 9.0, 20.0], vec![2.0, 11.0, 19.0], 500, 80).unwrap();
        let g2 = LenticuleGrid::new(vec![6.0, 14.0, 25.0], vec![7.0, 16.0, 24.0], 500, 80).unwrap();
        assert_eq!(regularizer_r2(&g), regularizer_r2(&g2));
    }

    #[test]
    fn data_term_of_constant_map() {
        let map = LikelihoodMap::from_fn(60, 64, |_, _| 1.0).unwrap();
        let g = LenticuleGrid::new(vec![3.5, 20.25, 40.0], vec![4.0, 21.0, 41.5], 60, 64).unwrap();
        let cfg = FitConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            smooth_sigma: 0.0,
            ..Default::default()
        };
        let r = objective(&g, &map, &cfg, 16.0).unwrap();
        assert_eq!(r.data_term, -180.0);
        assert_eq!(r.objective, -180.0);
        let grad = objective_gradient(&g, &map, &cfg, 16.0).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_columns() {
        let cols: Vec<usize> = (0..8).map(|k| 8 + 16 * k).collect();
        let map = LikelihoodMap::from_fn(32, 128, |_, x| if cols.contains(&x) { 1.0 } else { 0.0 })
            .unwrap();
        let cfg = FitConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            smooth_sigma: 0.0,
            ..Default::default()
        };
        let on = LenticuleGrid::vertical(cols.iter().map(|&c| c as f64).collect(), 32, 128).unwrap();
        assert_eq!(objective(&on, &map, &cfg, 16.0).unwrap().data_term, -(8.0 * 32.0));
        let off =
            LenticuleGrid::vertical(cols.iter().map(|&c| c as f64 + 1.0).collect(), 32, 128).unwrap();
        assert_eq!(objective(&off, &map, &cfg, 16.0).unwrap().data_term, 0.0);
    }

    #[test]
    fn uniform_grid_objective_is_data_term() {
        let map = LikelihoodMap::from_fn(16, 80, |_, x| (x % 7) as f32 / 7.0).unwrap();
        let g = LenticuleGrid::vertical(vec![5.0, 21.0, 37.0, 53.0], 16, 80).unwrap();
        let r = objective(&g, &map, &FitConfig::default(), 16.0).unwrap();
        assert_eq!(r.r1, 0.0);
        assert_eq!(r.r2, 0.0);
        assert_eq!(r.objective, r.data_term);
    }

    #[test]
    fn gradient_of_displaced_boundary_on_uniform_map() {
        let map = LikelihoodMap::from_fn(16, 96, |_, _| 0.5).unwrap();
        let t = vec![8.0, 24.0, 42.0, 56.0, 72.0];
        let g = LenticuleGrid::vertical(t, 16, 96).unwrap();
        let cfg = FitConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            smooth_sigma: 0.0,
            ..Default::default()
        };
        let grad = objective_gradient(&g, &map, &cfg, 16.0).unwrap();
        let by_hand = [0.0, -4.0, 8.0, -4.0, 0.0];
        assert_eq!(&grad[..5], &by_hand);
        assert_eq!(&grad[5..], &by_hand);
    }

    #[test]
    fn refine_rejects_bad_config() {
        let map = LikelihoodMap::zeros(16, 64);
        let g = LenticuleGrid::vertical(vec![5.0, 21.0, 37.0, 53.0], 16, 64).unwrap();
        let cfg = FitConfig {
            max_iters: 0,
            ..Default::default()
        };
        assert!(matches!(refine_grid(&map, &g, &cfg, 16.0), Err(Error::Config(_))));
    }

    fn tilted_map(height: usize, width: usize, spacing: f64, shear: f64) -> LikelihoodMap {
        let span = (height - 1) as f64;
        LikelihoodMap::from_fn(height, width, |h, x| {
            let offset = shear * (h as f64 / span - 0.5);
            let phase = (x as f64 - offset - 8.0).rem_euclid(spacing);
            let d = phase.min(spacing - phase);
            (-d * d / 2.0).exp() as f32
        })
        .unwrap()
    }

    #[test]
    fn shear_of_vertical_lines_is_zero() {
        let map = tilted_map(256, 200, 16.0, 0.0);
        assert!(estimate_shear(&map).abs() < 0.1);
    }

    #[test]
    fn shear_matches_tilt() {
        for shear in [-7.3, 3.1, 8.9] {
            let map = tilted_map(512, 256, 16.0, shear);
            let est = estimate_shear(&map);
            assert!((est - shear).abs() < 0.3, "{shear}: {est}");
        }
    }

    #[test]
    fn sheared_init_follows_lines() {
        let shear = 6.0;
        let map = tilted_map(512, 256, 16.0, shear);
        let grid = init_grid_sheared(&map, &width(16.0), estimate_shear(&map)).unwrap();
        for (t, b) in grid.top().iter().zip(grid.bottom()) {
            let mid = 0.5 * (t + b);
            let nearest = 8.0 + 16.0 * ((mid - 8.0) / 16.0).round();
            assert!((mid - nearest).abs() < 0.3, "{mid}");
            if *t > 0.0 && *b < 255.0 {
                assert!((b - t - shear).abs() < 0.3);
            }
        }
    }

    #[test]
    fn sheared_init_at_zero_shear_matches_vertical_init() {
        let map = tilted_map(256, 256, 16.0, 0.0);
        let a = init_grid(&map, &width(16.0)).unwrap();
        let b = init_grid_sheared(&map, &width(16.0), 0.0).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(endpoint_gap(&a, &b) < 1e-9);
    }

    fn endpoint_gap(a: &LenticuleGrid, b: &LenticuleGrid) -> f64 {
        a.top()
            .iter()
            .zip(b.top())
            .chain(a.bottom().iter().zip(b.bottom()))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}
