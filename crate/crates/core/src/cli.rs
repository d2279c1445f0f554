//! Command-line front end: `synth`, `extract`, `train`, `predict`, `evaluate`.
//!
//! Exit codes: 0 success, 2 I/O or input data, 3 configuration or dimension
//! mismatch, 4 numerical failure, 5 corrupt model file.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::{DatasetError, LabeledDataset};
use crate::eval::{compare_methods, cross_validate, ConfusionMatrix, EvalError};
use crate::features::{extract_all, ExtractionConfig};
use crate::imaging::{load_pgm, minmax_normalize, segment_region, write_mask_pgm, write_pgm, GrayImage, RegionMask};
use crate::linalg::Matrix;
use crate::modelfile::{self, ModelFileError};
use crate::pipeline::{fit, PipelineConfig, PipelineError, PipelineModel, SelectionConfig};
use crate::reduce::ReduceError;
use crate::selection::SelectionError;
use crate::svm::SvmError;
use crate::textfmt::sig9;

pub const EXIT_IO: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CORRUPT: i32 = 5;

/// Blur width used to derive a mask when the manifest names none.
pub const AUTO_MASK_SIGMA: f64 = 1.0;

/// t-test cutoff for the "With FS" runs when the config selects nothing.
pub const DEFAULT_P_CUTOFF: f64 = 0.1;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn svm_code(e: &SvmError) -> i32 {
    match e.root() {
        SvmError::NotConverged { .. } => EXIT_NUMERIC,
        SvmError::InvalidKernel(_) | SvmError::InvalidC(_) | SvmError::DimensionMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_IO,
    }
}

fn pipeline_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Svm(s) => svm_code(s),
        PipelineError::DimensionMismatch { .. } | PipelineError::Config(_) => EXIT_CONFIG,
        PipelineError::Reduce(r) => match r {
            ReduceError::SingularScatter | ReduceError::Linalg(_) => EXIT_NUMERIC,
            ReduceError::TooFewSamples(_) | ReduceError::ClassTooSmall { .. } | ReduceError::LabelCount { .. } => {
                EXIT_IO
            }
            _ => EXIT_CONFIG,
        },
        PipelineError::Selection(s) => match s {
            SelectionError::RfeTraining { source, .. } => svm_code(source),
            SelectionError::Evaluator(_) => EXIT_NUMERIC,
            SelectionError::BadTarget { .. } => EXIT_CONFIG,
            SelectionError::Dataset(d) => dataset_code(d),
            _ => EXIT_IO,
        },
    }
}

fn dataset_code(e: &DatasetError) -> i32 {
    match e {
        DatasetError::BadFoldCount { .. } | DatasetError::ClassTooSmall { .. } => EXIT_CONFIG,
        _ => EXIT_IO,
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::new(pipeline_code(&e), e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Pipeline(p) => pipeline_code(p),
            EvalError::Dataset(d) => dataset_code(d),
            _ => EXIT_IO,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::new(dataset_code(&e), e.to_string())
    }
}

impl From<ModelFileError> for CliError {
    fn from(e: ModelFileError) -> Self {
        let code = if e.is_corrupt() { EXIT_CORRUPT } else { EXIT_IO };
        CliError::new(code, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mrclass", version, about = "Region feature extraction and SVM classification of grayscale images")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic image set with a manifest.
    Synth(SynthArgs),
    /// Extract region features for every manifest row into a CSV.
    Extract(ExtractArgs),
    /// Fit the configured pipeline and write a model file.
    Train(TrainArgs),
    /// Classify feature rows (or manifest images) with a saved model.
    Predict(PredictArgs),
    /// Cross-validate the configured pipeline and compare against KNN.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Class separation in [0, 1]; 0 makes every class identically distributed.
    #[arg(long, default_value_t = 0.5)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Manifest CSV with header `image,mask,label`.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature CSV with a `label` column.
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Feature CSV or image manifest.
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Feature CSV with a `label` column.
    pub features: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also score this saved model on the given rows.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Fold count (overrides the config's `k`).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

pub const CONFIG_KEYS: [&str; 10] = [
    "pipeline",
    "kernel",
    "C",
    "levels",
    "d",
    "variance_fraction",
    "p_cutoff",
    "rfe_target",
    "k",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub extraction: ExtractionConfig,
    pub k: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            extraction: ExtractionConfig::default(),
            k: 5,
            seed: 0,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    let mut p_cutoff = None;
    let mut rfe_target = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("config line {lineno}: expected `key = value`")))?;
        let bad = |what: &str| CliError::new(EXIT_CONFIG, format!("config line {lineno}: invalid {key} value {value:?}{what}"));
        let num = || value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(""));
        let int = || value.parse::<usize>().map_err(|_| bad(""));
        match key {
            "pipeline" => cfg.pipeline.stages = value.parse().map_err(|e: String| bad(&format!(": {e}")))?,
            "kernel" => cfg.pipeline.kernel = value.parse().map_err(|e: String| bad(&format!(": {e}")))?,
            "C" => cfg.pipeline.c = num()?,
            "levels" => {
                cfg.extraction.levels = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>().ok().filter(|l| (2..=256).contains(l)))
                    .collect::<Option<Vec<_>>>()
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| bad(" (comma-separated integers in [2, 256])"))?;
            }
            "d" => cfg.pipeline.d = Some(int()?),
            "variance_fraction" => cfg.pipeline.variance_fraction = num()?,
            "p_cutoff" => p_cutoff = Some(num()?),
            "rfe_target" => rfe_target = Some(int()?),
            "k" => cfg.k = int()?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad(""))?,
            _ => {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    format!("config line {lineno}: unknown key {key:?} (valid keys: {})", CONFIG_KEYS.join(", ")),
                ))
            }
        }
    }
    cfg.pipeline.selection = match (p_cutoff, rfe_target) {
        (Some(_), Some(_)) => {
            return Err(CliError::new(EXIT_CONFIG, "config sets both p_cutoff and rfe_target; choose one selection method"))
        }
        (Some(p_cutoff), None) => SelectionConfig::Forward { p_cutoff },
        (None, Some(target)) => SelectionConfig::Rfe { target },
        (None, None) => SelectionConfig::None,
    };
    cfg.pipeline.seed = cfg.seed;
    Ok(cfg)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config, CliError> {
    let mut cfg = match path {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.pipeline.seed = s;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Manifest and feature CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    /// Distinct labels, sorted; a label's id is its position.
    pub labels: Vec<String>,
}

impl Manifest {
    pub fn label_id(&self, label: &str) -> usize {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).expect("label from this manifest")
    }
}

const MANIFEST_HEADER: &str = "image,mask,label";

/// Parses a manifest; relative paths resolve against `base`. Every
/// referenced file must exist.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Manifest, CliError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(CliError::new(EXIT_IO, format!("manifest must start with header `{MANIFEST_HEADER}`"))),
    }
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 || f[0].is_empty() || f[2].is_empty() {
            return Err(CliError::new(EXIT_IO, format!("manifest line {}: expected `image,mask,label`", i + 1)));
        }
        let row = ManifestRow {
            image: resolve(f[0]),
            mask: (!f[1].is_empty()).then(|| resolve(f[1])),
            label: f[2].to_string(),
        };
        for p in std::iter::once(&row.image).chain(row.mask.as_ref()) {
            if !p.is_file() {
                return Err(CliError::new(EXIT_IO, format!("manifest line {}: file not found: {}", i + 1, p.display())));
            }
        }
        rows.push(row);
    }
    let labels: Vec<String> = rows.iter().map(|r| r.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    Ok(Manifest { rows, labels })
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub matrix: Matrix,
    pub labels: Option<Vec<String>>,
}

/// Parses a feature CSV: a header of feature names with an optional
/// `label` column, then one numeric row per sample.
pub fn parse_feature_csv(text: &str) -> Result<FeatureTable, CliError> {
    let err = |line: usize, msg: String| CliError::new(EXIT_IO, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| CliError::new(EXIT_IO, "feature CSV is empty"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_col = cols.iter().position(|&c| c == "label");
    let names: Vec<String> = cols.iter().filter(|&&c| c != "label").map(|c| c.to_string()).collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(err(i + 1, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        for (j, v) in f.iter().enumerate() {
            if Some(j) == label_col {
                labels.push(v.to_string());
                continue;
            }
            let x: f64 = v.parse().map_err(|_| err(i + 1, format!("column {:?}: not a number: {v:?}", cols[j])))?;
            if !x.is_finite() {
                return Err(err(i + 1, format!("column {:?}: non-finite value {v:?}", cols[j])));
            }
            data.push(x);
        }
        n += 1;
    }
    Ok(FeatureTable {
        matrix: Matrix::from_vec(n, names.len(), data),
        names,
        labels: label_col.map(|_| labels),
    })
}

pub fn load_feature_csv(path: &Path) -> Result<FeatureTable, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_feature_csv(&text).map_err(|e| CliError::new(e.code, format!("{}: {}", path.display(), e.message)))
}

/// Labelled dataset from a feature table; label ids follow sorted label order.
pub fn labeled_dataset(t: &FeatureTable) -> Result<(LabeledDataset, Vec<String>), CliError> {
    let labels = t
        .labels
        .as_ref()
        .ok_or_else(|| CliError::new(EXIT_IO, "feature CSV has no `label` column"))?;
    let dict: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if dict.len() < 2 {
        return Err(CliError::new(EXIT_IO, format!("need at least 2 distinct labels, found {}", dict.len())));
    }
    let ids = labels.iter().map(|l| dict.binary_search(l).expect("in dict")).collect();
    let ds = LabeledDataset::new(t.matrix.clone(), ids, t.names.clone(), dict.len())?;
    Ok((ds, dict))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Parameters of one synthetic image.
#[derive(Debug, Clone)]
struct BlobSpec {
    cx: f64,
    cy: f64,
    semi_major: f64,
    semi_minor: f64,
    angle: f64,
    intensity: f64,
    period: f64,
    texture_angle: f64,
    noise_seed: u64,
}

impl BlobSpec {
    fn sample(rng: &mut ChaCha8Rng, class: usize, classes: usize, size: usize, separation: f64) -> Self {
        // class position in [−0.5, 0.5], shrunk toward 0 as separation drops
        let t = separation * (class as f64 / (classes - 1) as f64 - 0.5);
        let jitter = |rng: &mut ChaCha8Rng, sd: f64| Normal::new(0.0, sd).expect("valid sd").sample(rng);
        let s = size as f64;
        let radius = s * (0.22 + jitter(rng, 0.01));
        let aspect = 1.5f64.powf(2.0 * t + 1.0) * (1.0 + jitter(rng, 0.05));
        Self {
            cx: s / 2.0 + jitter(rng, s * 0.04),
            cy: s / 2.0 + jitter(rng, s * 0.04),
            semi_major: radius * aspect.sqrt(),
            semi_minor: radius / aspect.sqrt(),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            intensity: 0.6 + 0.25 * t + jitter(rng, 0.02),
            period: 6.0 * 2f64.powf(1.2 * t) * (1.0 + jitter(rng, 0.04)),
            texture_angle: rng.random_range(0.0..std::f64::consts::PI),
            noise_seed: rng.random(),
        }
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = (dx * c + dy * s) / self.semi_major;
        let v = (-dx * s + dy * c) / self.semi_minor;
        u * u + v * v <= 1.0
    }

    fn render(&self, size: usize) -> (GrayImage, RegionMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let noise = Normal::new(0.0, 0.03).expect("valid sd");
        let mask = RegionMask::from_fn(size, size, |x, y| self.inside(x as f64 + 0.5, y as f64 + 0.5));
        let (tc, ts) = (self.texture_angle.cos(), self.texture_angle.sin());
        let img = GrayImage::from_fn(size, size, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            let base = if mask.contains(x, y) {
                let phase = 2.0 * std::f64::consts::PI * (xf * tc + yf * ts) / self.period;
                self.intensity + 0.12 * phase.sin()
            } else {
                0.15
            };
            (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
        });
        (img, mask)
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String, CliError> {
    if a.classes < 2 {
        return Err(CliError::new(EXIT_CONFIG, "synth needs at least 2 classes"));
    }
    if a.per_class == 0 || a.size < 16 {
        return Err(CliError::new(EXIT_CONFIG, "synth needs --per-class >= 1 and --size >= 16"));
    }
    if !(0.0..=1.0).contains(&a.separation) {
        return Err(CliError::new(EXIT_CONFIG, "--separation must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut jobs = Vec::new();
    for c in 0..a.classes {
        for i in 0..a.per_class {
            jobs.push((c, i, BlobSpec::sample(&mut rng, c, a.classes, a.size, a.separation)));
        }
    }
    for dir in ["images", "masks"] {
        let d = a.out.join(dir);
        fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
    }
    let rows = jobs
        .par_iter()
        .map(|(c, i, spec)| {
            let (img, mask) = spec.render(a.size);
            let name = format!("class{c}_{i:04}.pgm");
            let (ip, mp) = (format!("images/{name}"), format!("masks/{name}"));
            write_pgm(&img, a.out.join(&ip)).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
            write_mask_pgm(&mask, a.out.join(&mp)).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
            Ok(format!("{ip},{mp},class{c}\n"))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = a.out.join("manifest.csv");
    write_file(&manifest, format!("{MANIFEST_HEADER}\n{}", rows.concat()))?;
    Ok(format!("wrote {} images to {}\n", rows.len(), manifest.display()))
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

fn load_mask(path: &Path, img: &GrayImage) -> Result<RegionMask, String> {
    let m = load_pgm(path).map_err(|e| e.to_string())?;
    let mask = RegionMask::from_image(&m);
    if !mask.same_shape(img) {
        return Err(format!("mask {} does not match the image size", path.display()));
    }
    Ok(mask)
}

fn extract_row(row: &ManifestRow, cfg: &ExtractionConfig) -> Result<Vec<f64>, String> {
    let raw = load_pgm(&row.image).map_err(|e| e.to_string())?;
    let img = minmax_normalize(&raw);
    let mask = match &row.mask {
        Some(p) => load_mask(p, &img)?,
        None => segment_region(&img, AUTO_MASK_SIGMA).map_err(|e| e.to_string())?,
    };
    Ok(extract_all(&img, &mask, cfg).map_err(|e| e.to_string())?.values)
}

/// Feature matrix for all manifest rows, in manifest order. Failures are
/// collected and reported together.
pub fn extract_manifest(m: &Manifest, cfg: &ExtractionConfig) -> Result<Matrix, CliError> {
    let results: Vec<Result<Vec<f64>, String>> = m.rows.par_iter().map(|r| extract_row(r, cfg)).collect();
    let failures: Vec<String> = results
        .iter()
        .zip(&m.rows)
        .filter_map(|(r, row)| r.as_ref().err().map(|e| format!("  {}: {e}", row.image.display())))
        .collect();
    if !failures.is_empty() {
        return Err(CliError::new(
            EXIT_IO,
            format!("feature extraction failed for {} image(s):\n{}", failures.len(), failures.join("\n")),
        ));
    }
    let data = results.into_iter().flat_map(|r| r.expect("checked")).collect();
    Ok(Matrix::from_vec(m.rows.len(), cfg.feature_count(), data))
}

pub fn feature_csv(names: &[String], x: &Matrix, labels: &[String]) -> String {
    let mut s = names.join(",");
    s.push_str(",label\n");
    for (r, l) in x.row_iter().zip(labels) {
        for v in r {
            s.push_str(&sig9(*v));
            s.push(',');
        }
        s.push_str(l);
        s.push('\n');
    }
    s
}

pub fn cmd_extract(a: &ExtractArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref(), None)?;
    let m = load_manifest(&a.manifest)?;
    let x = extract_manifest(&m, &cfg.extraction)?;
    let labels: Vec<String> = m.rows.iter().map(|r| r.label.clone()).collect();
    write_file(&a.out, feature_csv(&cfg.extraction.feature_names(), &x, &labels))?;
    Ok(format!("extracted {} features from {} images\n", x.cols(), x.rows()))
}

// ---------------------------------------------------------------------------
// train / predict / evaluate
// ---------------------------------------------------------------------------

fn train_report(model: &PipelineModel, selection: Option<&crate::selection::SelectionReport>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "stages: {}", model.stage_names().join(" -> "));
    let _ = writeln!(s, "features: {}", model.n_features());
    if let Some(r) = selection {
        s.push_str("\nfeature selection\n");
        s.push_str(&r.to_table(&model.feature_names));
    }
    if let Some(p) = &model.pca {
        let total: f64 = p.spectrum.iter().sum();
        let _ = writeln!(s, "\nPCA: {} of {} components kept", p.n_components(), p.spectrum.len());
        s.push_str("component  eigenvalue  cumulative_fraction\n");
        let mut acc = 0.0;
        for (i, l) in p.spectrum.iter().enumerate() {
            acc += l;
            let frac = if total > 0.0 { acc / total } else { 1.0 };
            let _ = writeln!(s, "{i:>9}  {}  {}", sig9(*l), sig9(frac));
        }
    }
    if let Some(l) = &model.lda {
        let vals: Vec<String> = l.eigenvalues.iter().map(|v| sig9(*v)).collect();
        let _ = writeln!(s, "\nLDA: {} directions, eigenvalues {}", l.n_dims(), vals.join(", "));
    }
    s.push_str("\nSVM support vectors per one-vs-rest machine\n");
    for (name, m) in model.class_names.iter().zip(&model.svm.machines) {
        let _ = writeln!(s, "  {name}: {}", m.n_support());
    }
    s
}

pub fn cmd_train(a: &TrainArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let (ds, dict) = labeled_dataset(&load_feature_csv(&a.features)?)?;
    let outcome = fit(&ds, &cfg.pipeline)?;
    let mut model = outcome.model;
    model.class_names = dict;
    modelfile::save(&a.out, &model)?;
    Ok(train_report(&model, outcome.selection.as_ref()))
}

/// Extraction settings implied by a model's feature names.
fn extraction_for(model: &PipelineModel) -> ExtractionConfig {
    let mut levels = Vec::new();
    for n in &model.feature_names {
        if let Some(rest) = n.strip_prefix("glcm") {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            if let Ok(l) = digits.parse::<usize>() {
                if !levels.contains(&l) {
                    levels.push(l);
                }
            }
        }
    }
    ExtractionConfig {
        levels,
        ..ExtractionConfig::default()
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<String, CliError> {
    let model = modelfile::load(&a.model)?;
    let head = fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
    let (ids, x): (Vec<String>, Matrix) = if head.lines().next().map(str::trim) == Some(MANIFEST_HEADER) {
        let m = load_manifest(&a.input)?;
        let x = extract_manifest(&m, &extraction_for(&model))?;
        (m.rows.iter().map(|r| r.image.display().to_string()).collect(), x)
    } else {
        let t = load_feature_csv(&a.input)?;
        if t.names.len() == model.feature_names.len() && t.names != model.feature_names {
            log::warn!("input feature names differ from the model's; using column order");
        }
        ((0..t.matrix.rows()).map(|i| i.to_string()).collect(), t.matrix)
    };
    let dv = model.decision_values(&x)?;
    let mut s = String::from("id,predicted");
    for c in &model.class_names {
        let _ = write!(s, ",decision_{c}");
    }
    s.push('\n');
    for (id, d) in ids.iter().zip(&dv) {
        let _ = write!(s, "{id},{}", model.class_names[crate::svm::argmax(d)]);
        for v in d {
            let _ = write!(s, ",{}", sig9(*v));
        }
        s.push('\n');
    }
    write_file(&a.out, s)?;
    Ok(format!("predicted {} rows\n", ids.len()))
}

fn confusion_text(m: &ConfusionMatrix, names: &[String]) -> String {
    let w = names.iter().map(String::len).max().unwrap_or(1).max(9);
    let mut s = format!("{:<w$}", "truth\\pred");
    for n in names {
        let _ = write!(s, "  {n:>w$}");
    }
    s.push('\n');
    for (n, row) in names.iter().zip(&m.counts) {
        let _ = write!(s, "{n:<w$}");
        for v in row {
            let _ = write!(s, "  {v:>w$}");
        }
        s.push('\n');
    }
    s
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    let table = load_feature_csv(&a.features)?;
    let (ds, dict) = labeled_dataset(&table)?;
    let k = a.k.unwrap_or(cfg.k);
    if k < 2 || k > ds.n_samples() {
        return Err(CliError::new(EXIT_CONFIG, format!("fold count {k} must be in [2, {}]", ds.n_samples())));
    }
    let mut s = String::new();
    if let Some(path) = &a.model {
        let model = modelfile::load(path)?;
        let pred = model.predict(ds.matrix())?;
        // the model may order labels differently from this file
        let truth: Vec<usize> = ds
            .labels()
            .iter()
            .map(|&l| model.class_names.iter().position(|n| *n == dict[l]).unwrap_or(usize::MAX))
            .collect();
        let hits = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        let _ = writeln!(s, "saved model accuracy on {} rows: {}\n", ds.n_samples(), sig9(hits as f64 / ds.n_samples() as f64));
    }
    let _ = writeln!(s, "pipeline: {}, {}-fold stratified cross-validation, seed {}\n", cfg.pipeline.stages, k, cfg.seed);
    let cv = cross_validate(&ds, &cfg.pipeline, k, cfg.seed)?;
    s.push_str(&cv.to_text());
    s.push('\n');
    s.push_str(&confusion_text(&cv.confusion, &dict));
    let fs = match cfg.pipeline.selection {
        SelectionConfig::None => SelectionConfig::Forward { p_cutoff: DEFAULT_P_CUTOFF },
        other => other,
    };
    let _ = writeln!(s, "\nmethod comparison (feature selection: {fs:?})");
    s.push_str(&compare_methods(&ds, &cfg.pipeline, fs, k, cfg.seed)?.to_text());
    if let Some(out) = &a.out {
        write_file(out, &s)?;
        return Ok(String::new());
    }
    Ok(s)
}

/// Runs one parsed invocation and returns the text for standard output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::new(EXIT_CONFIG, "--jobs must be at least 1"));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}
