//! Conversion from the lenticular RGB space to a destination RGB space.
//!
//! The shipped default is the composite matrix for the lenticular
//! filters. The individual chromatic-adaptation steps are available so the
//! composite can be rebuilt or replaced.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RgbRaster;

/// A row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorMatrix(pub [[f64; 3]; 3]);

/// Lenticular RGB to Adobe RGB (1998).
pub const LENTICULAR_TO_ADOBE: ColorMatrix = ColorMatrix([
    [0.789, 0.154, 0.057],
    [-0.286, 1.195, 0.06],
    [-0.049, 0.035, 1.035],
]);

/// CIECAM02 XYZ to LMS cone responses.
pub const CAT02: ColorMatrix = ColorMatrix([
    [0.7328, 0.4296, -0.1624],
    [-0.7036, 1.6975, 0.0061],
    [0.0030, 0.0136, 0.9834],
]);

/// XYZ to linear Adobe RGB (1998).
pub const XYZ_TO_ADOBE_RGB: ColorMatrix = ColorMatrix([
    [2.0413690, -0.5649464, -0.3446944],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0134474, -0.1183897, 1.0154096],
]);

/// Adobe RGB (1998) encoding exponent.
pub const ADOBE_RGB_GAMMA: f64 = 563.0 / 256.0;

impl ColorMatrix {
    pub const IDENTITY: ColorMatrix = ColorMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn diag(d: [f64; 3]) -> Self {
        ColorMatrix([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    #[inline]
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// `self * rhs`
    pub fn mul(&self, rhs: &ColorMatrix) -> ColorMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        ColorMatrix(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    fn check_invertible(&self) -> Result<()> {
        let det = self.determinant();
        let norm = self.0.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if !self.is_finite() || det.abs() <= 1e-12 * norm.powi(3) {
            return Err(Error::SingularMatrix);
        }
        Ok(())
    }

    /// Inverse via the adjugate.
    pub fn inverse(&self) -> Result<ColorMatrix> {
        self.check_invertible()?;
        let m = &self.0;
        let det = self.determinant();
        let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        Ok(ColorMatrix([
            [c(1, 2, 1, 2) / det, -c(0, 2, 1, 2) / det, c(0, 1, 1, 2) / det],
            [-c(1, 2, 0, 2) / det, c(0, 2, 0, 2) / det, -c(0, 1, 0, 2) / det],
            [c(1, 2, 0, 1) / det, -c(0, 2, 0, 1) / det, c(0, 1, 0, 1) / det],
        ]))
    }

    pub fn max_abs_diff(&self, other: &ColorMatrix) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

impl fmt::Display for ColorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.0 {
            writeln!(f, "{} {} {}", row[0], row[1], row[2])?;
        }
        Ok(())
    }
}

impl FromStr for ColorMatrix {
    type Err = Error;

    /// Three non-empty lines of three numbers; `#` starts a comment.
    fn from_str(s: &str) -> Result<Self> {
        let rows: Vec<&str> = s
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .collect();
        if rows.len() != 3 {
            return Err(Error::Parse(format!("matrix needs 3 rows, found {}", rows.len())));
        }
        let mut m = [[0.0; 3]; 3];
        for (i, line) in rows.iter().enumerate() {
            let vals: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("row {i}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 3 {
                return Err(Error::Parse(format!("row {i} has {} entries", vals.len())));
            }
            m[i].copy_from_slice(&vals);
        }
        let m = ColorMatrix(m);
        if !m.is_finite() {
            return Err(Error::Parse("matrix has non-finite entries".into()));
        }
        Ok(m)
    }
}

pub fn read_matrix(path: &Path) -> Result<ColorMatrix> {
    fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .parse()
}

pub fn write_matrix(path: &Path, m: &ColorMatrix) -> Result<()> {
    fs::write(path, m.to_string()).map_err(|e| Error::io(path, e))
}

/// XYZ tristimulus of a reference white, normalized to `Y = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Whitepoint([f64; 3]);

impl Whitepoint {
    pub const D65: Whitepoint = Whitepoint([0.95047, 1.0, 1.08883]);
    pub const LENTICULAR: Whitepoint = Whitepoint([0.991, 1.0, 1.315]);

    pub fn new(xyz: [f64; 3]) -> Result<Self> {
        if xyz.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config(format!("whitepoint {xyz:?} must be positive")));
        }
        Ok(Whitepoint(xyz.map(|v| v / xyz[1])))
    }

    pub fn xyz(&self) -> [f64; 3] {
        self.0
    }
}

/// Per-cone scaling `lms(dst) / lms(src)` under `lms_fwd`.
pub fn cat_scale(lms_fwd: &ColorMatrix, src: Whitepoint, dst: Whitepoint) -> [f64; 3] {
    let s = lms_fwd.apply(src.0);
    let d = lms_fwd.apply(dst.0);
    [d[0] / s[0], d[1] / s[1], d[2] / s[2]]
}

/// `step_e * lms_inv * diag(scale) * lms_fwd * step_a`
pub fn compose_cat(
    step_a: &ColorMatrix,
    lms_fwd: &ColorMatrix,
    scale: [f64; 3],
    lms_inv: &ColorMatrix,
    step_e: &ColorMatrix,
) -> Result<ColorMatrix> {
    for m in [step_a, lms_fwd, lms_inv, step_e] {
        m.check_invertible()?;
    }
    if scale.iter().any(|v| !v.is_finite() || *v == 0.0) {
        return Err(Error::SingularMatrix);
    }
    Ok(step_e
        .mul(lms_inv)
        .mul(&ColorMatrix::diag(scale))
        .mul(lms_fwd)
        .mul(step_a))
}

/// Steps B to E: XYZ under the lenticular white to linear Adobe RGB under
/// D65, adapting with CAT02.
pub fn adapt_to_adobe_rgb(src: Whitepoint) -> Result<ColorMatrix> {
    let scale = cat_scale(&CAT02, src, Whitepoint::D65);
    compose_cat(
        &ColorMatrix::IDENTITY,
        &CAT02,
        scale,
        &CAT02.inverse()?,
        &XYZ_TO_ADOBE_RGB,
    )
}

/// `m * pixel` for every pixel, optionally clipped to `[0, 1]`.
pub fn apply_matrix(img: &RgbRaster, m: &ColorMatrix, clamp: bool) -> RgbRaster {
    img.map_pixels(|p| {
        let v = m.apply(p);
        if clamp {
            v.map(|c| c.clamp(0.0, 1.0))
        } else {
            v
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvertConfig {
    pub clamp: bool,
    /// Encoding exponent applied after the matrix; `None` keeps linear light.
    pub gamma: Option<f64>,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self {
            clamp: true,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Converted {
    pub image: RgbRaster,
    /// Pixels with at least one channel outside `[0, 1]` before clipping.
    pub clipped_pixels: usize,
}

/// Matrix, clipping and optional gamma encoding, in that order.
pub fn convert(img: &RgbRaster, m: &ColorMatrix, cfg: &ConvertConfig) -> Converted {
    let linear = apply_matrix(img, m, false);
    let clipped_pixels = linear
        .data()
        .par_chunks_exact(3)
        .filter(|p| p.iter().any(|v| !(0.0..=1.0).contains(v)))
        .count();
    let image = linear.map_pixels(|p| {
        p.map(|v| {
            let v = if cfg.clamp { v.clamp(0.0, 1.0) } else { v };
            match cfg.gamma {
                Some(g) => v.signum() * v.abs().powf(1.0 / g),
                None => v,
            }
        })
    });
    Converted {
        image,
        clipped_pixels,
    }
}
