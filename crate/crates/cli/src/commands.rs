use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use lenticolor::colorspace::convert;
use lenticolor::detect::{detect_ridges, estimate_width, WidthEstimate};
use lenticolor::extract::stripe_pipeline;
use lenticolor::fit::{refine_grid, FitReport};
use lenticolor::grid::LenticuleGrid;
use lenticolor::imageio::{read_gray, read_rgb, write_gray16, write_rgb16};
use lenticolor::lfr::{self, LfrRaster};
use lenticolor::overlay::render_overlay;
use lenticolor::pipeline::{demosaic, fit_map, run_batch, run_scan, StageInputs, Timings};
use lenticolor::raster::{CoeffTensor, GrayRaster, LikelihoodMap};
use lenticolor::simulate::render_scan;
use lenticolor::stripe::{ChannelOrder, StripeImage};

use crate::config::{usage, JobConfig, UsageError};

const IMAGE_EXTENSIONS: &[&str] = &["png", "tif", "tiff"];

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

fn is_lfr(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("lfr"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Expands literal paths and glob patterns, in argument order.
pub fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pattern in patterns {
        let literal = PathBuf::from(pattern);
        if literal.exists() {
            out.push(literal);
            continue;
        }
        let matches: Vec<PathBuf> = glob::glob(pattern)
            .map_err(|e| usage(format!("bad glob {pattern:?}: {e}")))?
            .filter_map(|m| m.ok())
            .filter(|p| p.is_file())
            .collect();
        if matches.is_empty() {
            return Err(usage(format!("input {pattern:?} matches no file")));
        }
        out.extend(matches);
    }
    if out.is_empty() {
        return Err(usage("no inputs given"));
    }
    Ok(out)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

/// Output base names: file stems, prefixed by the parent directory name
/// when stems alone collide.
pub fn output_names(inputs: &[PathBuf]) -> Result<Vec<String>> {
    let unique = |names: &[String]| {
        let mut seen = std::collections::BTreeSet::new();
        names.iter().all(|n| seen.insert(n.as_str()))
    };
    let stems: Vec<String> = inputs.iter().map(|p| stem_of(p)).collect();
    if unique(&stems) {
        return Ok(stems);
    }
    let prefixed: Vec<String> = inputs
        .iter()
        .zip(&stems)
        .map(|(p, stem)| {
            match p.parent().and_then(|d| d.file_name()) {
                Some(dir) => format!("{}_{stem}", dir.to_string_lossy()),
                None => stem.clone(),
            }
        })
        .collect();
    if unique(&prefixed) {
        return Ok(prefixed);
    }
    Err(usage("several inputs would write the same output names"))
}

#[derive(Debug, Serialize)]
struct WidthReport {
    w_hat: f64,
    confidence: f64,
}

impl From<WidthEstimate> for WidthReport {
    fn from(w: WidthEstimate) -> Self {
        Self {
            w_hat: w.w_hat,
            confidence: w.confidence,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ImageReport {
    input: PathBuf,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    outputs: BTreeMap<&'static str, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<WidthReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    boundaries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stripe_dims: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    clipped_pixels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings: Option<Timings>,
}

impl ImageReport {
    fn failed(input: &Path, err: &anyhow::Error) -> Self {
        Self {
            input: input.to_path_buf(),
            status: "failed",
            error: Some(format!("{err:#}")),
            outputs: BTreeMap::new(),
            width: None,
            boundaries: None,
            fit: None,
            stripe_dims: None,
            clipped_pixels: None,
            timings: None,
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

struct Shared {
    job: JobConfig,
    likelihood: Option<LikelihoodMap>,
    tensor: Option<CoeffTensor>,
}

fn process_image(input: &Path, name: &str, out_dir: &Path, shared: &Shared) -> Result<ImageReport> {
    let job = &shared.job;
    let scan = read_gray(input).with_context(|| format!("reading {}", input.display()))?;
    let inputs = StageInputs {
        likelihood: shared.likelihood.as_ref(),
        tensor: shared.tensor.as_ref(),
        matrix: job.color_matrix()?,
    };
    let out = run_scan(&scan, &job.pipeline(), &inputs)?;

    let mut outputs = BTreeMap::new();
    let image_path = out_dir.join(format!("{name}.png"));
    write_rgb16(&image_path, &out.color.image)?;
    outputs.insert("image", image_path);
    if job.diagnostics.grid {
        let path = out_dir.join(format!("{name}.lgrid"));
        out.grid.write_lgrid(&path)?;
        outputs.insert("grid", path);
    }
    if job.diagnostics.overlay {
        let path = out_dir.join(format!("{name}.overlay.png"));
        write_rgb16(&path, &render_overlay(&scan, &out.grid)?)?;
        outputs.insert("overlay", path);
    }
    Ok(ImageReport {
        input: input.to_path_buf(),
        status: "ok",
        error: None,
        outputs,
        width: Some(out.width.into()),
        boundaries: Some(out.grid.len()),
        fit: Some(out.fit),
        stripe_dims: Some(out.stripe.dims()),
        clipped_pixels: Some(out.color.clipped_pixels),
        timings: Some(out.timings),
    })
}

/// Runs the full chain on every input. Returns the per-image reports; a
/// failing image is recorded and never stops the others.
pub fn pipeline(patterns: &[String], out_dir: &Path, job: JobConfig) -> Result<Vec<ImageReport>> {
    job.validate()?;
    let inputs = expand_inputs(patterns)?;
    let names = output_names(&inputs)?;
    if job.likelihood.is_some() && inputs.len() > 1 {
        return Err(usage("an external likelihood map applies to a single input only"));
    }
    job.color_matrix()?;
    let likelihood = match &job.likelihood {
        Some(p) => Some(lfr::read_likelihood(p, None).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let tensor = match &job.tensor {
        Some(p) => Some(lfr::read_coeff(p, None).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    create_dir(out_dir)?;

    let workers = job.parallelism;
    let shared = Shared {
        job,
        likelihood,
        tensor,
    };
    let items: Vec<(&PathBuf, &String)> = inputs.iter().zip(&names).collect();
    let reports = run_batch(&items, workers, |&(input, name)| {
        let report =
            process_image(input, name, out_dir, &shared).unwrap_or_else(|e| ImageReport::failed(input, &e));
        let path = out_dir.join(format!("{name}.report.json"));
        if let Err(e) = write_json(&path, &report) {
            return ImageReport::failed(input, &e);
        }
        report
    })?;

    let failed: Vec<&ImageReport> = reports.iter().filter(|r| !r.ok()).collect();
    let summary = json!({
        "images": reports.len(),
        "succeeded": reports.len() - failed.len(),
        "failed": failed.iter().map(|r| json!({"input": r.input, "error": r.error})).collect::<Vec<_>>(),
    });
    write_json(&out_dir.join("summary.json"), &summary)?;
    for r in &reports {
        match &r.error {
            None => eprintln!("ok      {}", r.input.display()),
            Some(e) => eprintln!("FAILED  {}: {e}", r.input.display()),
        }
    }
    eprintln!("{} of {} images succeeded", reports.len() - failed.len(), reports.len());
    Ok(reports)
}

/// Ridge likelihood of one scan, written as LFR.
pub fn detect(input: &Path, output: &Path, job: &JobConfig) -> Result<()> {
    job.validate()?;
    let scan = read_gray(input).with_context(|| format!("reading {}", input.display()))?;
    let map = detect_ridges(&scan, job.detect.scale)?;
    lfr::write_raster(output, &LfrRaster::from(map.clone()))?;
    let width = estimate_width(&map, job.detect.confidence_threshold);
    print_json(&json!({
        "input": input,
        "output": output,
        "dims": map.dims(),
        "width": width.as_ref().ok().map(|w| WidthReport::from(*w)),
        "width_error": width.as_ref().err().map(|e| e.to_string()),
    }))
}

/// Grid fitted to a likelihood map, optionally from a given starting grid.
pub fn fit(map_path: &Path, init: Option<&Path>, output: &Path, job: &JobConfig) -> Result<()> {
    job.validate()?;
    let map = lfr::read_likelihood(map_path, None)?;
    let pipeline = job.pipeline();
    let (width, init_len, grid, report) = match init {
        Some(p) => {
            let start = LenticuleGrid::read_lgrid(p)?;
            let width = estimate_width(&map, job.detect.confidence_threshold)?;
            let (grid, report) = refine_grid(&map, &start, &job.fit, width.w_hat)?;
            (width, start.len(), grid, report)
        }
        None => {
            let (width, start, grid, report) = fit_map(&map, &pipeline)?;
            (width, start.len(), grid, report)
        }
    };
    grid.write_lgrid(output)?;
    print_json(&json!({
        "input": map_path,
        "output": output,
        "width": WidthReport::from(width),
        "initial_boundaries": init_len,
        "boundaries": grid.len(),
        "fit": report,
    }))
}

fn write_stripe(path: &Path, stripe: &StripeImage) -> Result<()> {
    let (h, w) = stripe.dims();
    let gray = GrayRaster::new(h, w, stripe.data().iter().map(|&v| v as f32).collect())?;
    if is_lfr(path) {
        lfr::write_raster(path, &LfrRaster::from(gray))?;
    } else {
        write_gray16(path, &gray)?;
    }
    Ok(())
}

fn read_stripe(path: &Path, order: ChannelOrder) -> Result<StripeImage> {
    let gray = if is_lfr(path) {
        lfr::read_gray(path, None)?
    } else {
        read_gray(path)?
    };
    let (h, w) = gray.dims();
    let data = gray.data().iter().map(|&v| f64::from(v)).collect();
    Ok(StripeImage::new(h, w, order, data)?)
}

/// Stripe image of a scan under a given grid: LFR for `.lfr` outputs,
/// 16-bit PNG otherwise.
pub fn extract(input: &Path, grid_path: &Path, output: &Path, job: &JobConfig) -> Result<()> {
    job.validate()?;
    let scan = read_gray(input).with_context(|| format!("reading {}", input.display()))?;
    let grid = LenticuleGrid::read_lgrid(grid_path)?;
    let stripe = stripe_pipeline(&scan, &grid, &job.extract)?;
    write_stripe(output, &stripe)?;
    print_json(&json!({
        "input": input,
        "output": output,
        "dims": stripe.dims(),
        "lenticules": stripe.lenticules(),
        "channel_order": stripe.order().to_string(),
    }))
}

pub fn demosaic_stripe(input: &Path, output: &Path, job: &JobConfig) -> Result<()> {
    job.validate()?;
    let stripe = read_stripe(input, job.extract.channel_order)?;
    let tensor = match &job.tensor {
        Some(p) => Some(lfr::read_coeff(p, None)?),
        None => None,
    };
    let rgb = demosaic(&stripe, job.demosaic, tensor.as_ref())?;
    write_rgb16(output, &rgb)?;
    print_json(&json!({
        "input": input,
        "output": output,
        "method": job.demosaic,
        "dims": rgb.dims(),
    }))
}

pub fn convert_color(input: &Path, output: &Path, job: &JobConfig) -> Result<()> {
    job.validate()?;
    let matrix = job.color_matrix()?;
    let img = read_rgb(input).with_context(|| format!("reading {}", input.display()))?;
    let converted = convert(&img, &matrix, &job.color);
    write_rgb16(output, &converted.image)?;
    print_json(&json!({
        "input": input,
        "output": output,
        "matrix": matrix.rows(),
        "clipped_pixels": converted.clipped_pixels,
    }))
}

pub fn overlay(scan_path: &Path, grid_path: &Path, output: &Path) -> Result<()> {
    let scan = read_gray(scan_path).with_context(|| format!("reading {}", scan_path.display()))?;
    let grid = LenticuleGrid::read_lgrid(grid_path)?;
    write_rgb16(output, &render_overlay(&scan, &grid)?)?;
    Ok(())
}

/// Image files directly inside `dir`, sorted by name.
pub fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("cannot read corpus {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(UsageError::CorpusEmpty(dir.to_path_buf()).into());
    }
    Ok(files)
}

#[derive(Debug, Serialize)]
pub struct SceneReport {
    pub bundle: PathBuf,
    pub source: PathBuf,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn render_bundle(source: &Path, bundle: &Path, job: &JobConfig, seed: u64) -> Result<()> {
    let src = read_rgb(source).with_context(|| format!("reading {}", source.display()))?;
    let params = lenticolor::simulate::SimParams {
        seed,
        ..job.simulate.clone()
    };
    let scene = render_scan(&src, &params)?;
    create_dir(bundle)?;
    write_gray16(&bundle.join("scan.png"), &scene.scan)?;
    scene.truth_grid.write_lgrid(bundle.join("grid.lgrid"))?;
    let params_path = bundle.join("params.toml");
    fs::write(&params_path, toml::to_string(&params)?).with_context(|| format!("writing {}", params_path.display()))?;
    write_rgb16(&bundle.join("source.png"), &scene.source)?;
    Ok(())
}

/// Renders `count` scene bundles, cycling through the corpus. Scene `i`
/// uses seed `job.simulate.seed + i`.
pub fn simulate(corpus: &Path, out_dir: &Path, count: usize, job: &JobConfig) -> Result<Vec<SceneReport>> {
    job.validate()?;
    let files = corpus_files(corpus)?;
    create_dir(out_dir)?;
    let scenes: Vec<(usize, PathBuf)> = (0..count).map(|i| (i, files[i % files.len()].clone())).collect();
    let base = job.simulate.seed;
    let reports = run_batch(&scenes, job.parallelism, |(i, source)| {
        let seed = base.wrapping_add(*i as u64);
        let bundle = out_dir.join(format!("scene_{i:04}"));
        let error = render_bundle(source, &bundle, job, seed).err().map(|e| format!("{e:#}"));
        SceneReport {
            bundle,
            source: source.clone(),
            seed,
            error,
        }
    })?;
    for r in &reports {
        match &r.error {
            None => eprintln!("ok      {}", r.bundle.display()),
            Some(e) => eprintln!("FAILED  {} from {}: {e}", r.bundle.display(), r.source.display()),
        }
    }
    Ok(reports)
}
