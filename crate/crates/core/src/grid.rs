//! Straight-line lenticule boundaries stored by their top and bottom
//! x-positions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Maximum tilt accepted by the grid invariants, in degrees.
pub const MAX_TILT_DEG: f64 = 2.0;

/// `M` boundaries given by their x-position on the top row (`t`) and the
/// bottom row (`b`) of an `height` x `width` image. Row `h` of boundary `m`
/// sits at `t[m] + h / (height - 1) * (b[m] - t[m])`.
#[derive(Debug, Clone, PartialEq)]
pub struct LenticuleGrid {
    t: Vec<f64>,
    b: Vec<f64>,
    height: usize,
    width: usize,
}

impl LenticuleGrid {
    pub fn new(t: Vec<f64>, b: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        let grid = Self {
            t,
            b,
            height,
            width,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// A grid whose boundaries are all vertical.
    pub fn vertical(positions: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        Self::new(positions.clone(), positions, height, width)
    }

    /// Checks ordering, bounds and the tilt sanity limit. Returns the index
    /// of the first crossing as `IllPosedFit`-style context in the message.
    pub fn validate(&self) -> Result<()> {
        if self.t.len() != self.b.len() {
            return Err(Error::InvalidGrid(format!(
                "t has {} entries but b has {}",
                self.t.len(),
                self.b.len()
            )));
        }
        if self.height < 2 || self.width < 2 {
            return Err(Error::InvalidGrid("image must be at least 2x2".into()));
        }
        let max_x = (self.width - 1) as f64;
        let max_shift = self.height as f64 * MAX_TILT_DEG.to_radians().tan();
        for (m, (&t, &b)) in self.t.iter().zip(&self.b).enumerate() {
            if !t.is_finite() || !b.is_finite() {
                return Err(Error::InvalidGrid(format!("boundary {m} is not finite")));
            }
            if !(0.0..=max_x).contains(&t) || !(0.0..=max_x).contains(&b) {
                return Err(Error::InvalidGrid(format!(
                    "boundary {m} ({t}, {b}) is outside [0, {max_x}]"
                )));
            }
            if (t - b).abs() > max_shift {
                return Err(Error::InvalidGrid(format!(
                    "boundary {m} is tilted by {:.3} px over the image height",
                    t - b
                )));
            }
        }
        if let Some(m) = self.first_crossing() {
            return Err(Error::InvalidGrid(format!(
                "boundaries {m} and {} are not strictly increasing",
                m + 1
            )));
        }
        Ok(())
    }

    /// Index `m` of the first pair `(m, m + 1)` that is not strictly ordered
    /// at the top or the bottom row.
    pub fn first_crossing(&self) -> Option<usize> {
        (0..self.t.len().saturating_sub(1))
            .find(|&m| self.t[m + 1] <= self.t[m] || self.b[m + 1] <= self.b[m])
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn top(&self) -> &[f64] {
        &self.t
    }

    pub fn bottom(&self) -> &[f64] {
        &self.b
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

    /// Fraction of the way from the top row to the bottom row.
    #[inline]
    pub fn row_fraction(&self, h: usize) -> f64 {
        h as f64 / (self.height - 1) as f64
    }

    /// x-position of boundary `m` on row `h`.
    #[inline]
    pub fn position(&self, m: usize, h: usize) -> f64 {
        let s = self.row_fraction(h);
        self.t[m] + s * (self.b[m] - self.t[m])
    }

    /// Concatenated `(t, b)`, the layout used by the optimizer.
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = self.t.clone();
        p.extend_from_slice(&self.b);
        p
    }

    /// Splits a `(t, b)` parameter vector without validating it.
    pub(crate) fn from_params_unchecked(p: &[f64], height: usize, width: usize) -> Self {
        let m = p.len() / 2;
        Self {
            t: p[..m].to_vec(),
            b: p[m..].to_vec(),
            height,
            width,
        }
    }

    /// Mean spacing between consecutive boundaries, averaged over top and
    /// bottom rows.
    pub fn mean_spacing(&self) -> f64 {
        let m = self.len();
        if m < 2 {
            return 0.0;
        }
        ((self.t[m - 1] - self.t[0]) + (self.b[m - 1] - self.b[0])) / (2.0 * (m - 1) as f64)
    }

    /// Renders the `LGRID M H W` text format.
    pub fn to_lgrid(&self) -> String {
        let mut s = format!("LGRID {} {} {}\n", self.len(), self.height, self.width);
        for (t, b) in self.t.iter().zip(&self.b) {
            let _ = writeln!(s, "{t:.6} {b:.6}");
        }
        s
    }

    pub fn parse_lgrid(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty grid file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "LGRID" {
            return Err(Error::Parse(format!("bad grid header {header:?}")));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad integer {s:?} in grid header")))
        };
        let m = parse_usize(fields[1])?;
        let height = parse_usize(fields[2])?;
        let width = parse_usize(fields[3])?;
        let mut t = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for line in lines {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number {v:?} in grid")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 2 {
                return Err(Error::Parse(format!("grid line {line:?} needs two values")));
            }
            t.push(vals[0]);
            b.push(vals[1]);
        }
        if t.len() != m {
            return Err(Error::Parse(format!(
                "header announces {m} boundaries, found {}",
                t.len()
            )));
        }
        Self::new(t, b, height, width)
    }

    pub fn write_lgrid(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_lgrid()).map_err(|e| Error::io(path, e))
    }

    pub fn read_lgrid(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_lgrid(&text)
    }
}

/// Root-mean-square endpoint error of `fitted` against `truth`.
///
/// Each truth boundary is matched to the fitted boundary whose mid-height
/// position is closest; both the top and bottom endpoints contribute.
pub fn endpoint_rms(fitted: &LenticuleGrid, truth: &LenticuleGrid) -> f64 {
    if fitted.is_empty() || truth.is_empty() {
        return f64::INFINITY;
    }
    let mid = |g: &LenticuleGrid, m: usize| 0.5 * (g.t[m] + g.b[m]);
    let mut sq = 0.0;
    for m in 0..truth.len() {
        let target = mid(truth, m);
        let k = (0..fitted.len())
            .min_by(|&a, &b| {
                (mid(fitted, a) - target)
                    .abs()
                    .total_cmp(&(mid(fitted, b) - target).abs())
            })
            .expect("fitted grid is not empty");
        sq += (fitted.t[k] - truth.t[m]).powi(2) + (fitted.b[k] - truth.b[m]).powi(2);
    }
    (sq / (2 * truth.len()) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_crossing_and_out_of_bounds() {
        assert!(LenticuleGrid::vertical(vec![1.0, 5.0, 4.0], 10, 10).is_err());
        assert!(LenticuleGrid::vertical(vec![1.0, 5.0, 10.0], 10, 10).is_err());
        assert!(LenticuleGrid::vertical(vec![-0.1, 5.0], 10, 10).is_err());
        assert!(LenticuleGrid::new(vec![1.0, 5.0], vec![5.0, 6.0], 10, 10).is_err());
    }

    #[test]
    fn tilt_bound_uses_two_degrees() {
        let h = 512;
        let limit = h as f64 * 2f64.to_radians().tan();
        assert!(LenticuleGrid::new(vec![10.0], vec![10.0 + limit - 1e-9], h, 100).is_ok());
        assert!(LenticuleGrid::new(vec![10.0], vec![10.0 + limit + 1e-6], h, 100).is_err());
    }

    #[test]
    fn position_interpolates_endpoints() {
        let g = LenticuleGrid::new(vec![2.0], vec![4.0], 101, 20).unwrap();
        assert_eq!(g.position(0, 0), 2.0);
        assert_eq!(g.position(0, 100), 4.0);
        assert!((g.position(0, 50) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn lgrid_text_round_trip() {
        let g = LenticuleGrid::new(vec![1.5, 9.25], vec![2.0, 10.125], 40, 20).unwrap();
        let text = g.to_lgrid();
        assert_eq!(text, "LGRID 2 40 20\n1.500000 2.000000\n9.250000 10.125000\n");
        assert_eq!(LenticuleGrid::parse_lgrid(&text).unwrap(), g);
    }

    #[test]
    fn lgrid_rejects_count_mismatch() {
        assert!(LenticuleGrid::parse_lgrid("LGRID 3 10 10\n1 1\n2 2\n").is_err());
        assert!(LenticuleGrid::parse_lgrid("GRID 1 10 10\n1 1\n").is_err());
    }

    #[test]
    fn rms_of_shifted_grid() {
        let a = LenticuleGrid::vertical(vec![10.0, 26.0, 42.0], 32, 64).unwrap();
        let b = LenticuleGrid::vertical(vec![10.5, 26.5, 42.5], 32, 64).unwrap();
        assert!((endpoint_rms(&b, &a) - 0.5).abs() < 1e-12);
    }
}
