//! Boundary overlay for visual inspection of a fit.

use crate::error::{Error, Result};
use crate::grid::LenticuleGrid;
use crate::raster::{GrayRaster, RgbRaster};

pub const OVERLAY_COLOR: [f64; 3] = [1.0, 0.0, 0.0];

/// The scan in gray with every boundary drawn at `round(x_m(h))`, blended
/// 50% with [`OVERLAY_COLOR`].
pub fn render_overlay(scan: &GrayRaster, grid: &LenticuleGrid) -> Result<RgbRaster> {
    if scan.dims() != grid.dims() {
        return Err(Error::DimMismatch {
            a: scan.dims(),
            b: grid.dims(),
        });
    }
    let (height, width) = scan.dims();
    let mut data: Vec<f64> = scan
        .data()
        .iter()
        .flat_map(|&v| [f64::from(v); 3])
        .collect();
    for h in 0..height {
        for m in 0..grid.len() {
            let x = grid.position(m, h).round().clamp(0.0, (width - 1) as f64) as usize;
            let i = (h * width + x) * 3;
            for ch in 0..3 {
                data[i + ch] = 0.5 * data[i + ch] + 0.5 * OVERLAY_COLOR[ch];
            }
        }
    }
    RgbRaster::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_lines_on_blank_scan() {
        let scan = GrayRaster::new(10, 40, vec![0.0; 400]).unwrap();
        let grid = LenticuleGrid::vertical(vec![3.0, 17.0, 31.0], 10, 40).unwrap();
        let out = render_overlay(&scan, &grid).unwrap();
        for h in 0..10 {
            for x in 0..40 {
                let expected = if [3, 17, 31].contains(&x) { [0.5, 0.0, 0.0] } else { [0.0; 3] };
                assert_eq!(out.pixel(h, x), expected);
            }
        }
    }

    #[test]
    fn tilted_line_endpoints() {
        let scan = GrayRaster::new(200, 60, vec![1.0; 12000]).unwrap();
        let grid = LenticuleGrid::new(vec![10.0, 30.0], vec![14.0, 34.0], 200, 60).unwrap();
        let out = render_overlay(&scan, &grid).unwrap();
        assert_eq!(out.pixel(0, 10), [1.0, 0.5, 0.5]);
        assert_eq!(out.pixel(199, 14), [1.0, 0.5, 0.5]);
        assert_eq!(out.pixel(199, 34), [1.0, 0.5, 0.5]);
        assert_eq!(out.pixel(0, 14), [1.0; 3]);
    }

    #[test]
    fn mismatched_dims() {
        let scan = GrayRaster::new(10, 40, vec![0.0; 400]).unwrap();
        let grid = LenticuleGrid::vertical(vec![3.0, 17.0], 10, 41).unwrap();
        assert!(matches!(render_overlay(&scan, &grid), Err(Error::DimMismatch { .. })));
    }
}
