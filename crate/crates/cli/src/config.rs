//! Job configuration: a TOML file, optionally named by `LENTICOLOR_CONFIG`,
//! with command-line flags layered on top.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use lenticolor::colorspace::{read_matrix, ColorMatrix, ConvertConfig, LENTICULAR_TO_ADOBE};
use lenticolor::detect::DetectConfig;
use lenticolor::extract::{ExtractConfig, ResampleFilter};
use lenticolor::fit::FitConfig;
use lenticolor::pipeline::{DemosaicMethod, PipelineConfig};
use lenticolor::simulate::SimParams;
use lenticolor::stripe::ChannelOrder;

pub const CONFIG_ENV: &str = "LENTICOLOR_CONFIG";
pub const DEFAULT_MATRIX: &str = "paper-default";

/// Errors that mean the job could not start. They map to exit status 2.
#[derive(Debug)]
pub enum UsageError {
    Config(String),
    CorpusEmpty(PathBuf),
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UsageError::Config(msg) => write!(f, "configuration error: {msg}"),
            UsageError::CorpusEmpty(dir) => {
                write!(f, "corpus directory {} contains no PNG or TIFF images", dir.display())
            }
        }
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError::Config(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diagnostics {
    /// Write the fitted grid next to each output.
    pub grid: bool,
    /// Write the scan with the fitted boundaries drawn over it.
    pub overlay: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            grid: true,
            overlay: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    /// Worker threads for batch jobs.
    pub parallelism: usize,
    /// `"paper-default"` or a path to a 3x3 matrix file.
    pub matrix: String,
    /// Externally produced likelihood map (LFR), replacing the detector.
    pub likelihood: Option<PathBuf>,
    /// Externally produced convex weights (LFR).
    pub tensor: Option<PathBuf>,
    pub diagnostics: Diagnostics,
    pub detect: DetectConfig,
    pub fit: FitConfig,
    pub extract: ExtractConfig,
    pub demosaic: DemosaicMethod,
    pub color: ConvertConfig,
    pub simulate: SimParams,
}

impl Default for JobConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        Self {
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            matrix: DEFAULT_MATRIX.to_string(),
            likelihood: None,
            tensor: None,
            diagnostics: Diagnostics::default(),
            detect: pipeline.detect,
            fit: pipeline.fit,
            extract: pipeline.extract,
            demosaic: pipeline.demosaic,
            color: pipeline.color,
            simulate: SimParams::default(),
        }
    }
}

impl JobConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: JobConfig = toml::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if cfg.matrix != DEFAULT_MATRIX {
            let mut m = PathBuf::from(&cfg.matrix);
            rebase(&mut m);
            cfg.matrix = m.to_string_lossy().into_owned();
        }
        cfg.likelihood.as_mut().map(rebase);
        cfg.tensor.as_mut().map(rebase);
        Ok(cfg)
    }

    /// The explicit file if given, else the one named by the environment,
    /// else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            detect: self.detect,
            fit: self.fit,
            extract: self.extract,
            demosaic: self.demosaic,
            color: self.color,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(usage("parallelism must be >= 1"));
        }
        self.pipeline().validate().map_err(|e| usage(e.to_string()))?;
        self.simulate.validate().map_err(|e| usage(e.to_string()))?;
        for path in [&self.likelihood, &self.tensor].into_iter().flatten() {
            if !path.is_file() {
                return Err(usage(format!("{} does not exist", path.display())));
            }
        }
        if self.matrix != DEFAULT_MATRIX && !Path::new(&self.matrix).is_file() {
            return Err(usage(format!("matrix file {} does not exist", self.matrix)));
        }
        Ok(())
    }

    pub fn color_matrix(&self) -> Result<ColorMatrix> {
        if self.matrix == DEFAULT_MATRIX {
            return Ok(LENTICULAR_TO_ADOBE);
        }
        read_matrix(Path::new(&self.matrix))
            .with_context(|| format!("loading color matrix {}", self.matrix))
            .map_err(|e| usage(format!("{e:#}")))
    }
}

/// Stage parameters shared by the processing subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct StageArgs {
    /// Worker threads for batch jobs.
    #[arg(long, short = 'j')]
    pub jobs: Option<usize>,
    /// Ridge detector smoothing scale in pixels.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Minimum peak-to-median power ratio of the width estimate.
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
    /// Weight of the uniform-width regularizer.
    #[arg(long)]
    pub lambda1: Option<f64>,
    /// Weight of the width-smoothness regularizer.
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Horizontal pre-smoothing of the likelihood map in pixels.
    #[arg(long)]
    pub smooth_sigma: Option<f64>,
    /// Color order of the three bands inside a lenticule, e.g. RGB.
    #[arg(long)]
    pub channel_order: Option<ChannelOrder>,
    /// Fraction of the lenticule width dropped next to each boundary.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Vertical median window of the stripe image.
    #[arg(long)]
    pub median_k: Option<usize>,
    #[arg(long, value_parser = parse_filter)]
    pub resample_filter: Option<ResampleFilter>,
    /// nearest, linear, cubic or convex.
    #[arg(long)]
    pub demosaic: Option<DemosaicMethod>,
    /// Color matrix file, or "paper-default".
    #[arg(long)]
    pub matrix: Option<String>,
    /// Likelihood map (LFR) to use instead of the ridge detector.
    #[arg(long)]
    pub likelihood: Option<PathBuf>,
    /// Convex demosaicing weights (LFR coefficient tensor).
    #[arg(long)]
    pub tensor: Option<PathBuf>,
    /// Keep out-of-gamut values instead of clipping them.
    #[arg(long)]
    pub no_clamp: bool,
    /// Encoding exponent applied after the color matrix.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Write a boundary overlay next to each output.
    #[arg(long)]
    pub overlay: bool,
    /// Do not write the fitted grid.
    #[arg(long)]
    pub no_grid: bool,
}

fn parse_filter(s: &str) -> Result<ResampleFilter, String> {
    match s.to_ascii_lowercase().as_str() {
        "nearest" => Ok(ResampleFilter::Nearest),
        "linear" => Ok(ResampleFilter::Linear),
        other => Err(format!("unknown resample filter {other:?}")),
    }
}

impl StageArgs {
    pub fn apply(&self, cfg: &mut JobConfig) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.jobs => cfg.parallelism);
        set!(self.scale => cfg.detect.scale);
        set!(self.confidence_threshold => cfg.detect.confidence_threshold);
        set!(self.lambda1 => cfg.fit.lambda1);
        set!(self.lambda2 => cfg.fit.lambda2);
        set!(self.max_iters => cfg.fit.max_iters);
        set!(self.grad_tol => cfg.fit.grad_tol);
        set!(self.smooth_sigma => cfg.fit.smooth_sigma);
        set!(self.channel_order => cfg.extract.channel_order);
        set!(self.margin => cfg.extract.boundary_margin);
        set!(self.median_k => cfg.extract.median_k);
        set!(self.resample_filter => cfg.extract.resample_filter);
        set!(self.demosaic => cfg.demosaic);
        set!(self.matrix => cfg.matrix);
        if self.likelihood.is_some() {
            cfg.likelihood = self.likelihood.clone();
        }
        if self.tensor.is_some() {
            cfg.tensor = self.tensor.clone();
        }
        if self.no_clamp {
            cfg.color.clamp = false;
        }
        if self.gamma.is_some() {
            cfg.color.gamma = self.gamma;
        }
        if self.overlay {
            cfg.diagnostics.overlay = true;
        }
        if self.no_grid {
            cfg.diagnostics.grid = false;
        }
    }
}

/// Simulator parameters settable from the command line.
#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    /// Mean lenticule width in pixels.
    #[arg(long)]
    pub mean_width: Option<f64>,
    /// Relative amplitude of the width drift.
    #[arg(long)]
    pub width_mod_amplitude: Option<f64>,
    /// Drift period in lenticules.
    #[arg(long)]
    pub width_mod_period: Option<f64>,
    /// Boundary rotation in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub tilt: Option<f64>,
    /// Boundary line FWHM in pixels.
    #[arg(long)]
    pub boundary_width: Option<f64>,
    #[arg(long)]
    pub boundary_depth: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub gain_jitter: Option<f64>,
    #[arg(long)]
    pub offset_jitter: Option<f64>,
    #[arg(long)]
    pub channel_order: Option<ChannelOrder>,
    /// Seed of the first scene; scene `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, short = 'j')]
    pub jobs: Option<usize>,
}

impl SimArgs {
    pub fn apply(&self, cfg: &mut JobConfig) {
        let p = &mut cfg.simulate;
        let pairs = [
            (self.mean_width, &mut p.mean_width),
            (self.width_mod_amplitude, &mut p.width_mod_amplitude),
            (self.width_mod_period, &mut p.width_mod_period),
            (self.tilt, &mut p.tilt),
            (self.boundary_width, &mut p.boundary_width),
            (self.boundary_depth, &mut p.boundary_depth),
            (self.noise_sigma, &mut p.noise_sigma),
            (self.gain_jitter, &mut p.gain_jitter),
            (self.offset_jitter, &mut p.offset_jitter),
        ];
        for (src, dst) in pairs {
            if let Some(v) = src {
                *dst = v;
            }
        }
        if let Some(order) = self.channel_order {
            p.channel_order = order;
        }
        if let Some(seed) = self.seed {
            p.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            cfg.parallelism = jobs;
        }
    }
}
