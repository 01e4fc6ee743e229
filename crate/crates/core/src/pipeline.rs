//! The full reconstruction chain for one scan, and a bounded worker pool
//! for batches.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::colorspace::{convert, ColorMatrix, ConvertConfig, Converted, LENTICULAR_TO_ADOBE};
use crate::demosaic::{fill_baseline, fill_convex, BaselineKind, KernelKind, WeightSource};
use crate::detect::{detect_ridges, estimate_width, DetectConfig, WidthEstimate};
use crate::error::{Error, Result};
use crate::extract::{stripe_pipeline, ExtractConfig};
use crate::fit::{estimate_shear, init_grid_sheared, refine_grid, FitConfig, FitReport};
use crate::grid::LenticuleGrid;
use crate::raster::{CoeffTensor, GrayRaster, LikelihoodMap, RgbRaster};
use crate::stripe::StripeImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemosaicMethod {
    Nearest,
    Linear,
    Cubic,
    /// Convex combination; clamped Catmull-Rom weights unless a tensor is
    /// supplied.
    Convex,
}

impl std::str::FromStr for DemosaicMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Self::Nearest),
            "linear" => Ok(Self::Linear),
            "cubic" => Ok(Self::Cubic),
            "convex" => Ok(Self::Convex),
            other => Err(Error::Config(format!("unknown demosaic method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub detect: DetectConfig,
    pub fit: FitConfig,
    pub extract: ExtractConfig,
    pub demosaic: DemosaicMethod,
    pub color: ConvertConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            fit: FitConfig::default(),
            extract: ExtractConfig::default(),
            demosaic: DemosaicMethod::Convex,
            color: ConvertConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.detect.validate()?;
        self.fit.validate()?;
        self.extract.validate()
    }
}

/// Optional externally produced stage inputs.
#[derive(Debug, Clone, Copy)]
pub struct StageInputs<'a> {
    /// Replaces the ridge detector.
    pub likelihood: Option<&'a LikelihoodMap>,
    /// Convex weights; only used with [`DemosaicMethod::Convex`].
    pub tensor: Option<&'a CoeffTensor>,
    pub matrix: ColorMatrix,
}

impl Default for StageInputs<'_> {
    fn default() -> Self {
        Self {
            likelihood: None,
            tensor: None,
            matrix: LENTICULAR_TO_ADOBE,
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub detect: f64,
    pub width: f64,
    pub init: f64,
    pub refine: f64,
    pub extract: f64,
    pub demosaic: f64,
    pub color: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub width: WidthEstimate,
    pub init_grid: LenticuleGrid,
    pub grid: LenticuleGrid,
    pub fit: FitReport,
    pub stripe: StripeImage,
    /// Demosaiced image before color conversion.
    pub demosaiced: RgbRaster,
    pub color: Converted,
    pub timings: Timings,
}

pub fn demosaic(stripe: &StripeImage, method: DemosaicMethod, tensor: Option<&CoeffTensor>) -> Result<RgbRaster> {
    match method {
        DemosaicMethod::Nearest => Ok(fill_baseline(stripe, BaselineKind::Nearest)),
        DemosaicMethod::Linear => Ok(fill_baseline(stripe, BaselineKind::Linear)),
        DemosaicMethod::Cubic => Ok(fill_baseline(stripe, BaselineKind::Cubic)),
        DemosaicMethod::Convex => match tensor {
            Some(t) => fill_convex(stripe, &WeightSource::External(t.clone())),
            None => fill_convex(stripe, &WeightSource::Analytic(KernelKind::ConvexCubic)),
        },
    }
}

/// Extraction and demosaicing with a known grid.
pub fn reconstruct_with_grid(
    scan: &GrayRaster,
    grid: &LenticuleGrid,
    cfg: &PipelineConfig,
    tensor: Option<&CoeffTensor>,
) -> Result<(StripeImage, RgbRaster)> {
    let stripe = stripe_pipeline(scan, grid, &cfg.extract)?;
    let rgb = demosaic(&stripe, cfg.demosaic, tensor)?;
    Ok((stripe, rgb))
}

/// Grid estimation from a likelihood map: width, sheared initialization,
/// refinement.
pub fn fit_map(
    map: &LikelihoodMap,
    cfg: &PipelineConfig,
) -> Result<(WidthEstimate, LenticuleGrid, LenticuleGrid, FitReport)> {
    let width = estimate_width(map, cfg.detect.confidence_threshold)?;
    let init = init_grid_sheared(map, &width, estimate_shear(map))?;
    let (grid, fit) = refine_grid(map, &init, &cfg.fit, width.w_hat)?;
    Ok((width, init, grid, fit))
}

pub fn run_scan(scan: &GrayRaster, cfg: &PipelineConfig, inputs: &StageInputs<'_>) -> Result<PipelineOutput> {
    let mut timings = Timings::default();
    let mut clock = Instant::now();
    let mut lap = |slot: &mut f64| {
        *slot = clock.elapsed().as_secs_f64();
        clock = Instant::now();
    };

    let detected;
    let map = match inputs.likelihood {
        Some(m) => {
            if m.dims() != scan.dims() {
                return Err(Error::DimMismatch {
                    a: m.dims(),
                    b: scan.dims(),
                });
            }
            m
        }
        None => {
            detected = detect_ridges(scan, cfg.detect.scale)?;
            &detected
        }
    };
    lap(&mut timings.detect);
    let width = estimate_width(map, cfg.detect.confidence_threshold)?;
    lap(&mut timings.width);
    let init = init_grid_sheared(map, &width, estimate_shear(map))?;
    lap(&mut timings.init);
    let (grid, fit) = refine_grid(map, &init, &cfg.fit, width.w_hat)?;
    lap(&mut timings.refine);
    let stripe = stripe_pipeline(scan, &grid, &cfg.extract)?;
    lap(&mut timings.extract);
    let tensor = match cfg.demosaic {
        DemosaicMethod::Convex => inputs.tensor,
        _ => None,
    };
    let demosaiced = demosaic(&stripe, cfg.demosaic, tensor)?;
    lap(&mut timings.demosaic);
    let color = convert(&demosaiced, &inputs.matrix, &cfg.color);
    lap(&mut timings.color);

    Ok(PipelineOutput {
        width,
        init_grid: init,
        grid,
        fit,
        stripe,
        demosaiced,
        color,
        timings,
    })
}

/// Maps `f` over `items` on a pool of `workers` threads. Results keep the
/// input order.
pub fn run_batch<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use rayon::prelude::*;
    if workers == 0 {
        return Err(Error::Config("parallelism must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}
