//! Command-line front end.
//!
//! Every setting has a flat dotted key (`speckle.nu`, `recon.steps`, ...).
//! Values are resolved in this order, later sources winning:
//!
//! 1. built-in defaults
//! 2. `SPECKLE_CS_SEED` for `seed`
//! 3. the `--config` JSON file (flat keys, or a `manifest.json` of a previous run)
//! 4. `--key value` flags
//!
//! Each run writes `manifest.json` with the full effective configuration into
//! its output directory; passing that file back through `--config` repeats the run.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 missing artifact, 4 numeric failure.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dataset::{self, LabeledSample, Split};
use crate::error::Error;
use crate::experiments::{
    aggregate, aggregate_to_csv, parse_records_csv, records_to_csv, run_cells, CorrelationRecord, Method, SweepContext,
    SweepGrid,
};
use crate::forward::{simulate, BucketSignal, MeasurementMatrix};
use crate::generator::fixture::{random_model, Architecture};
use crate::generator::{load_model, random_latent, save_model, AdamConfig, GeneratorModel};
use crate::image::GrayImage;
use crate::l1::{delta_grid, solve_bp, solve_bpdn, tune_delta, BpdnConfig};
use crate::metrics::pearson;
use crate::rawio::{self, Sidecar};
use crate::recon::{reconstruct, ReconConfig};
use crate::seed::{self, Stream};
use crate::speckle::{SpeckleConfig, SpeckleStack};

pub const SEED_ENV: &str = "SPECKLE_CS_SEED";
pub const MANIFEST: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn missing(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_MISSING,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) | Error::Json(_) => EXIT_CONFIG,
            Error::MissingArtifact(_) | Error::MissingClass(_) => EXIT_MISSING,
            Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => EXIT_MISSING,
            Error::NonFinite(_) | Error::Reconstruction(_) => EXIT_NUMERIC,
            _ => EXIT_FAILURE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "speckle-cs", version, about = "Compressive speckle imaging toolkit")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a stack of speckle patterns.
    Speckle(SpeckleArgs),
    /// Simulate speckle measurements of one image.
    Measure(MeasureArgs),
    /// Reconstruct an image with bp, bpdn or gan.
    Reconstruct(ReconstructArgs),
    /// Run a correlation sweep over cutoff, measurement count, noise and method.
    Sweep(SweepArgs),
    /// Aggregate a records CSV, or correlate two images.
    Eval(EvalArgs),
    /// Write a random-weight generator and optionally a synthetic dataset.
    ExportFixture(ExportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Speckle(_) => "speckle",
            Command::Measure(_) => "measure",
            Command::Reconstruct(_) => "reconstruct",
            Command::Sweep(_) => "sweep",
            Command::Eval(_) => "eval",
            Command::ExportFixture(_) => "export-fixture",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Speckle(a) => &a.common,
            Command::Measure(a) => &a.common,
            Command::Reconstruct(a) => &a.common,
            Command::Sweep(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::ExportFixture(a) => &a.common,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON file of dotted keys, or a manifest.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count)]
    verbose: u8,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

// Flag structs: every field is optional and serializes under its dotted key.

#[derive(Debug, Args, Serialize)]
struct SpeckleArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "speckle.grid")]
    #[serde(rename = "speckle.grid")]
    grid: Option<usize>,
    #[arg(long = "speckle.nu")]
    #[serde(rename = "speckle.nu")]
    nu: Option<f64>,
    #[arg(long = "speckle.count")]
    #[serde(rename = "speckle.count")]
    count: Option<usize>,
    /// Also write every pattern as a normalized PNG.
    #[arg(long = "speckle.png", num_args = 0..=1, default_missing_value = "true")]
    #[serde(rename = "speckle.png")]
    png: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
struct SourceArgs {
    /// Ground-truth image (PNG or PGM).
    #[arg(long = "input.image")]
    #[serde(rename = "input.image")]
    image: Option<PathBuf>,
    /// Directory with the four standard MNIST IDX files.
    #[arg(long = "dataset-dir", alias = "dataset.dir")]
    #[serde(rename = "dataset.dir")]
    dataset_dir: Option<PathBuf>,
    #[arg(long = "dataset.split")]
    #[serde(rename = "dataset.split")]
    split: Option<String>,
    #[arg(long = "dataset.index")]
    #[serde(rename = "dataset.index")]
    index: Option<usize>,
    #[arg(long = "measure.grid")]
    #[serde(rename = "measure.grid")]
    grid: Option<usize>,
    #[arg(long = "speckle.nu")]
    #[serde(rename = "speckle.nu")]
    nu: Option<f64>,
    #[arg(long = "measure.m")]
    #[serde(rename = "measure.m")]
    m: Option<usize>,
    #[arg(long = "noise.level")]
    #[serde(rename = "noise.level")]
    noise: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct MeasureArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Args, Serialize)]
struct ReconArgs {
    #[arg(long = "recon.steps")]
    #[serde(rename = "recon.steps")]
    steps: Option<usize>,
    #[arg(long = "recon.restarts")]
    #[serde(rename = "recon.restarts")]
    restarts: Option<usize>,
    #[arg(long = "recon.lr")]
    #[serde(rename = "recon.lr")]
    lr: Option<f64>,
    /// GGW1 generator weights.
    #[arg(long = "weights", alias = "gan.weights")]
    #[serde(rename = "gan.weights")]
    weights: Option<PathBuf>,
    #[arg(long = "bpdn.points")]
    #[serde(rename = "bpdn.points")]
    delta_points: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct ReconstructArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Measurement matrix (`.f64` with sidecar) instead of simulating one.
    #[arg(long = "input.matrix")]
    #[serde(rename = "input.matrix")]
    matrix: Option<PathBuf>,
    #[arg(long = "input.signal")]
    #[serde(rename = "input.signal")]
    signal: Option<PathBuf>,
    /// Residual budget for bpdn; tuned against the truth when omitted and a truth is known.
    #[arg(long = "bpdn.delta")]
    #[serde(rename = "bpdn.delta")]
    delta: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    recon: ReconArgs,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// `default` or `repeated` (five repetitions, no noise).
    #[arg(long = "grid.preset")]
    #[serde(rename = "grid.preset")]
    preset: Option<String>,
    #[arg(long = "grid.nu", value_delimiter = ',')]
    #[serde(rename = "grid.nu")]
    nus: Option<Vec<f64>>,
    #[arg(long = "grid.m", value_delimiter = ',')]
    #[serde(rename = "grid.m")]
    ms: Option<Vec<usize>>,
    #[arg(long = "grid.noise", value_delimiter = ',')]
    #[serde(rename = "grid.noise")]
    noises: Option<Vec<f64>>,
    #[arg(long = "grid.methods", value_delimiter = ',', value_parser = parse_method)]
    #[serde(rename = "grid.methods")]
    methods: Option<Vec<Method>>,
    #[arg(long = "grid.repetitions")]
    #[serde(rename = "grid.repetitions")]
    repetitions: Option<usize>,
    #[arg(long = "dataset-dir", alias = "dataset.dir")]
    #[serde(rename = "dataset.dir")]
    dataset_dir: Option<PathBuf>,
    #[arg(long = "dataset.split")]
    #[serde(rename = "dataset.split")]
    split: Option<String>,
    /// Save every reconstruction as a PNG under `images/`.
    #[arg(long = "sweep.images", num_args = 0..=1, default_missing_value = "true")]
    #[serde(rename = "sweep.images")]
    images: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    recon: ReconArgs,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Records CSV of a sweep.
    #[arg(long = "eval.records")]
    #[serde(rename = "eval.records")]
    records: Option<PathBuf>,
    #[arg(long = "eval.image")]
    #[serde(rename = "eval.image")]
    image: Option<PathBuf>,
    #[arg(long = "eval.reference")]
    #[serde(rename = "eval.reference")]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ExportArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    /// `tiny` or `standard`.
    #[arg(long = "fixture.arch")]
    #[serde(rename = "fixture.arch")]
    arch: Option<String>,
    /// Also write a synthetic IDX dataset with this many generated images per class.
    #[arg(long = "fixture.per_class")]
    #[serde(rename = "fixture.per_class")]
    per_class: Option<usize>,
}

// Effective settings: every key present, defaults filled in.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SpeckleSettings {
    seed: u64,
    #[serde(rename = "speckle.grid")]
    grid: usize,
    #[serde(rename = "speckle.nu")]
    nu: f64,
    #[serde(rename = "speckle.count")]
    count: usize,
    #[serde(rename = "speckle.png")]
    png: bool,
}

impl Default for SpeckleSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: 28,
            nu: 0.2,
            count: 9,
            png: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SourceSettings {
    #[serde(rename = "input.image")]
    image: Option<PathBuf>,
    #[serde(rename = "dataset.dir")]
    dataset_dir: Option<PathBuf>,
    #[serde(rename = "dataset.split")]
    split: String,
    #[serde(rename = "dataset.index")]
    index: usize,
    #[serde(rename = "measure.grid")]
    grid: usize,
    #[serde(rename = "speckle.nu")]
    nu: f64,
    #[serde(rename = "measure.m")]
    m: usize,
    #[serde(rename = "noise.level")]
    noise: f64,
}

impl Default for SourceSettings {
    fn default() -> Self {
        Self {
            image: None,
            dataset_dir: None,
            split: "test".into(),
            index: 0,
            grid: 28,
            nu: 0.2,
            m: 100,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct MeasureSettings {
    seed: u64,
    #[serde(flatten)]
    source: SourceSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ReconSettings {
    #[serde(rename = "recon.steps")]
    steps: usize,
    #[serde(rename = "recon.restarts")]
    restarts: usize,
    #[serde(rename = "recon.lr")]
    lr: f64,
    #[serde(rename = "gan.weights")]
    weights: Option<PathBuf>,
    #[serde(rename = "bpdn.points")]
    delta_points: usize,
}

impl Default for ReconSettings {
    fn default() -> Self {
        let d = ReconConfig::default();
        Self {
            steps: d.steps,
            restarts: d.restarts,
            lr: d.adam.lr,
            weights: None,
            delta_points: 8,
        }
    }
}

impl ReconSettings {
    fn config(&self, seed: u64) -> ReconConfig {
        ReconConfig {
            steps: self.steps,
            restarts: self.restarts,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed,
            plateau: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ReconstructSettings {
    seed: u64,
    method: Method,
    #[serde(rename = "input.matrix")]
    matrix: Option<PathBuf>,
    #[serde(rename = "input.signal")]
    signal: Option<PathBuf>,
    #[serde(rename = "bpdn.delta")]
    delta: Option<f64>,
    #[serde(flatten)]
    source: SourceSettings,
    #[serde(flatten)]
    recon: ReconSettings,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            method: Method::Bp,
            matrix: None,
            signal: None,
            delta: None,
            source: SourceSettings::default(),
            recon: ReconSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SweepSettings {
    seed: u64,
    #[serde(rename = "grid.preset")]
    preset: String,
    #[serde(rename = "grid.nu")]
    nus: Option<Vec<f64>>,
    #[serde(rename = "grid.m")]
    ms: Option<Vec<usize>>,
    #[serde(rename = "grid.noise")]
    noises: Option<Vec<f64>>,
    #[serde(rename = "grid.methods")]
    methods: Option<Vec<Method>>,
    #[serde(rename = "grid.repetitions")]
    repetitions: Option<usize>,
    #[serde(rename = "dataset.dir")]
    dataset_dir: Option<PathBuf>,
    #[serde(rename = "dataset.split")]
    split: String,
    #[serde(rename = "sweep.images")]
    images: bool,
    #[serde(flatten)]
    recon: ReconSettings,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: "default".into(),
            nus: None,
            ms: None,
            noises: None,
            methods: None,
            repetitions: None,
            dataset_dir: None,
            split: "test".into(),
            images: false,
            recon: ReconSettings::default(),
        }
    }
}

impl SweepSettings {
    /// Resolve the preset and overrides into a grid, and write the resolved
    /// lists back so the manifest is self-contained.
    fn resolve(&mut self) -> CliResult<SweepGrid> {
        let base = match self.preset.as_str() {
            "default" => SweepGrid::default(),
            "repeated" => SweepGrid::repeated_counts(),
            other => return Err(CliError::config(format!("unknown grid preset '{other}'"))),
        };
        let grid = SweepGrid {
            nus: self.nus.clone().unwrap_or(base.nus),
            ms: self.ms.clone().unwrap_or(base.ms),
            noises: self.noises.clone().unwrap_or(base.noises),
            methods: self.methods.clone().unwrap_or(base.methods),
            repetitions: self.repetitions.unwrap_or(base.repetitions),
            seed: self.seed,
            recon: self.recon.config(0),
            solver: BpdnConfig::default(),
            delta_points: self.recon.delta_points,
        };
        grid.validate()?;
        self.nus = Some(grid.nus.clone());
        self.ms = Some(grid.ms.clone());
        self.noises = Some(grid.noises.clone());
        self.methods = Some(grid.methods.clone());
        self.repetitions = Some(grid.repetitions);
        Ok(grid)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvalSettings {
    #[serde(rename = "eval.records")]
    records: Option<PathBuf>,
    #[serde(rename = "eval.image")]
    image: Option<PathBuf>,
    #[serde(rename = "eval.reference")]
    reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ExportSettings {
    seed: u64,
    #[serde(rename = "fixture.arch")]
    arch: String,
    #[serde(rename = "fixture.per_class")]
    per_class: usize,
}

impl Default for ExportSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            arch: "tiny".into(),
            per_class: 0,
        }
    }
}

/// Merge env, config file and flags into the settings type `S`.
fn resolve<S>(command: &str, common: &Common, flags: &impl Serialize) -> CliResult<S>
where
    S: Serialize + DeserializeOwned + Default,
{
    let known: BTreeSet<String> = match serde_json::to_value(S::default()) {
        Ok(Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect(),
        _ => unreachable!("settings serialize to an object"),
    };
    let mut merged = Map::new();

    if known.contains("seed") {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV}='{raw}' is not an unsigned integer")))?;
            merged.insert("seed".into(), json!(seed));
        }
    }

    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => CliError::missing(format!("config file {} not found", path.display())),
            _ => CliError::config(format!("cannot read {}: {e}", path.display())),
        })?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let Value::Object(mut file) = value else {
            return Err(CliError::config(format!("{} must hold a JSON object", path.display())));
        };
        // A manifest wraps the flat keys.
        if let (Some(Value::String(cmd)), Some(Value::Object(_))) = (file.get("command"), file.get("config")) {
            if cmd != command {
                return Err(CliError::config(format!(
                    "{} is a manifest for '{cmd}', not '{command}'",
                    path.display()
                )));
            }
            let Some(Value::Object(inner)) = file.remove("config") else { unreachable!() };
            file = inner;
        }
        merged.extend(file);
    }

    if let Ok(Value::Object(f)) = serde_json::to_value(flags) {
        merged.extend(f.into_iter().filter(|(_, v)| !v.is_null()));
    }

    if let Some(k) = merged.keys().find(|k| !known.contains(*k)) {
        return Err(CliError::config(format!("unknown setting '{k}' for {command}")));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::config(format!("invalid settings: {e}")))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::io(path, e).into()
}

fn prepare_out(out: &Path) -> CliResult {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_manifest(out: &Path, command: &str, settings: &impl Serialize) -> CliResult {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": settings,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    write_text(&out.join(MANIFEST), &(text + "\n"))
}

fn parse_split(s: &str) -> CliResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(CliError::config(format!("dataset split must be 'train' or 'test', got '{other}'"))),
    }
}

fn load_samples(dir: Option<&Path>, split: &str) -> CliResult<Vec<LabeledSample>> {
    let split = parse_split(split)?;
    let dir = dir.ok_or_else(|| CliError::missing("no dataset directory given (--dataset-dir)"))?;
    Ok(dataset::load_split(dir, split)?)
}

fn fit_to_grid(image: GrayImage, grid: usize) -> CliResult<GrayImage> {
    if image.width() == grid && image.height() == grid {
        return Ok(image);
    }
    Ok(image.center_crop_square().resize_area(grid, grid)?)
}

/// Ground truth from `input.image` or `dataset.dir`; `None` when neither is set.
fn load_truth(src: &SourceSettings) -> CliResult<Option<GrayImage>> {
    if src.grid == 0 {
        return Err(CliError::config("measure.grid must be positive"));
    }
    if let Some(path) = &src.image {
        return Ok(Some(fit_to_grid(GrayImage::load(path)?, src.grid)?));
    }
    if src.dataset_dir.is_some() {
        let samples = load_samples(src.dataset_dir.as_deref(), &src.split)?;
        let sample = samples.get(src.index).ok_or_else(|| {
            CliError::config(format!("dataset.index {} outside {} samples", src.index, samples.len()))
        })?;
        return Ok(Some(fit_to_grid(sample.image.clone(), src.grid)?));
    }
    Ok(None)
}

fn cmd_speckle(out: &Path, s: &SpeckleSettings) -> CliResult {
    if s.count == 0 {
        return Err(CliError::config("speckle.count must be positive"));
    }
    let config = SpeckleConfig::new(s.grid, s.nu, seed::stream(s.seed, Stream::Speckle))?;
    let stack = SpeckleStack::generate(s.count, config)?;
    prepare_out(out)?;
    write_manifest(out, "speckle", s)?;
    let mut sidecar = Sidecar::new("speckle_stack", vec![s.count, s.grid, s.grid]);
    sidecar.seed = Some(config.seed);
    sidecar.nu = Some(s.nu);
    let data: Vec<f64> = stack.patterns.iter().flat_map(|p| p.pixels().iter().copied()).collect();
    rawio::write(&out.join("speckle.f64"), &data, &sidecar)?;
    if s.png {
        for (i, p) in stack.patterns.iter().enumerate() {
            p.normalized().save_png(&out.join(format!("pattern_{i:04}.png")))?;
        }
    }
    println!("wrote {} patterns to {}", s.count, out.display());
    Ok(())
}

fn cmd_measure(out: &Path, s: &MeasureSettings) -> CliResult {
    let src = &s.source;
    let truth = load_truth(src)?.ok_or_else(|| CliError::missing("no input image given (--input.image or --dataset-dir)"))?;
    if src.m == 0 {
        return Err(CliError::config("measure.m must be positive"));
    }
    let acq = simulate(&truth, src.m, src.nu, src.noise, s.seed)?;
    prepare_out(out)?;
    write_manifest(out, "measure", s)?;
    acq.matrix.save(&out.join("matrix.f64"))?;
    acq.signal.save(&out.join("signal.f64"))?;
    write_text(&out.join("signal.csv"), &acq.signal.to_csv())?;
    truth.save_png(&out.join("truth.png"))?;
    println!("wrote {} measurements to {}", src.m, out.display());
    Ok(())
}

fn load_generator(weights: Option<&Path>) -> CliResult<GeneratorModel> {
    let path = weights.ok_or_else(|| CliError::missing("method gan needs generator weights (--weights)"))?;
    if !path.exists() {
        return Err(CliError::missing(format!("weights file {} not found", path.display())));
    }
    Ok(load_model(path)?)
}

fn cmd_reconstruct(out: &Path, s: &ReconstructSettings) -> CliResult {
    let model = match s.method {
        Method::Gan => Some(load_generator(s.recon.weights.as_deref())?),
        Method::Diffraction => return Err(CliError::config("reconstruct supports bp, bpdn and gan")),
        _ => None,
    };
    let truth = load_truth(&s.source)?;
    let (matrix, signal) = match (&s.matrix, &s.signal) {
        (Some(a), Some(y)) => (MeasurementMatrix::load(a)?, BucketSignal::load(y)?),
        (None, None) => {
            let truth = truth
                .as_ref()
                .ok_or_else(|| CliError::missing("give --input.matrix and --input.signal, or an image to simulate"))?;
            if s.source.m == 0 {
                return Err(CliError::config("measure.m must be positive"));
            }
            let acq = simulate(truth, s.source.m, s.source.nu, s.source.noise, s.seed)?;
            (acq.matrix, acq.signal)
        }
        _ => return Err(CliError::config("input.matrix and input.signal go together")),
    };
    if let Some(t) = &truth {
        if t.len() != matrix.cols() {
            return Err(Error::Shape(format!("truth has {} pixels, matrix has {} columns", t.len(), matrix.cols())).into());
        }
    }
    let side = (matrix.cols() as f64).sqrt().round() as usize;
    if side * side != matrix.cols() {
        return Err(Error::Shape(format!("{} columns is not a square image", matrix.cols())).into());
    }
    let y = signal.values();

    prepare_out(out)?;
    write_manifest(out, "reconstruct", s)?;
    let (image, mut report) = match s.method {
        Method::Bp | Method::Bpdn => {
            let solver = BpdnConfig::default();
            let (solve, delta) = match (s.method, s.delta, &truth) {
                (Method::Bp, ..) => (solve_bp(&matrix, y, &solver)?, 0.0),
                (_, Some(delta), _) => (solve_bpdn(&matrix, y, &BpdnConfig { delta, ..solver })?, delta),
                (_, None, Some(t)) => {
                    let choice = tune_delta(&matrix, y, t, &delta_grid(y, s.recon.delta_points), &solver)?;
                    (choice.report, choice.delta)
                }
                (_, None, None) => (solve_bpdn(&matrix, y, &solver)?, 0.0),
            };
            let image = GrayImage::new(side, side, solve.solution.clone())?;
            let report = json!({
                "method": s.method,
                "delta": delta,
                "converged": solve.converged,
                "solver": solve,
            });
            (image, report)
        }
        Method::Gan => {
            let model = model.expect("loaded above");
            let cfg = s.recon.config(seed::derive(s.seed, &[Stream::Latent as u64]));
            let res = reconstruct(&model, &matrix, y, &cfg)?;
            let mut trace = String::from("step,loss\n");
            for (i, l) in res.loss_trace.iter().enumerate() {
                let _ = writeln!(trace, "{i},{l}");
            }
            write_text(&out.join("loss_trace.csv"), &trace)?;
            let report = json!({ "method": s.method, "converged": true, "gan": res });
            (res.image, report)
        }
        Method::Diffraction => unreachable!(),
    };
    let r = truth.as_ref().and_then(|t| pearson(image.pixels(), t.pixels()));
    report["r"] = json!(r);
    if let Some(t) = &truth {
        t.save_png(&out.join("truth.png"))?;
    }
    image.clipped().save_png(&out.join(format!("{}.png", s.method)))?;
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_text(&out.join("report.json"), &(text + "\n"))?;
    match r {
        Some(r) => println!("{}: r = {r:.4}", s.method),
        None => println!("{}: done", s.method),
    }
    Ok(())
}

/// Records of a finished cell, if its marker is present and complete.
fn read_marker(path: &Path) -> Option<Vec<CorrelationRecord>> {
    let text = fs::read_to_string(path).ok()?;
    let records = parse_records_csv(&text).ok()?;
    (records.len() == 10).then_some(records)
}

fn cmd_sweep(out: &Path, s: &mut SweepSettings) -> CliResult {
    let grid = s.resolve()?;
    let model = if grid.methods.contains(&Method::Gan) {
        Some(load_generator(s.recon.weights.as_deref())?)
    } else {
        None
    };
    let samples = load_samples(s.dataset_dir.as_deref(), &s.split)?;
    let mut ctx = SweepContext::new(&grid, model.as_ref(), &samples)?;

    prepare_out(out)?;
    write_manifest(out, "sweep", s)?;
    let cell_dir = out.join("cells");
    prepare_out(&cell_dir)?;
    if s.images {
        let dir = out.join("images");
        prepare_out(&dir)?;
        ctx.image_dir = Some(dir);
    }

    let cells = grid.cells();
    let mut results: Vec<Option<Vec<CorrelationRecord>>> = cells
        .iter()
        .map(|c| read_marker(&cell_dir.join(format!("{}.csv", c.key()))))
        .collect();
    let pending: Vec<_> = cells
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.is_none())
        .map(|(c, _)| *c)
        .collect();
    if pending.len() < cells.len() {
        log::info!("resuming: {} of {} cells already done", cells.len() - pending.len(), cells.len());
    }
    let fresh = run_cells(&grid, &ctx, &pending, |cell, records| {
        // Cells with failed rows get no marker, so a rerun retries them.
        if records.iter().any(CorrelationRecord::is_failure) {
            return Ok(());
        }
        let path = cell_dir.join(format!("{}.csv", cell.key()));
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, records_to_csv(records)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    })?;
    let mut fresh = fresh.into_iter();
    for slot in results.iter_mut().filter(|r| r.is_none()) {
        *slot = fresh.next();
    }
    let records: Vec<CorrelationRecord> = results.into_iter().flatten().flatten().collect();

    write_text(&out.join("records.csv"), &records_to_csv(&records))?;
    write_text(&out.join("aggregate.csv"), &aggregate_to_csv(&aggregate(&records)))?;
    let failures: Vec<_> = records.iter().filter(|r| r.is_failure()).collect();
    println!("{} records in {} cells written to {}", records.len(), cells.len(), out.display());
    if !failures.is_empty() {
        let mut msg = format!("{} of {} records failed:", failures.len(), records.len());
        for f in failures.iter().take(10) {
            let _ = write!(msg, "\n  {} nu={} m={} noise={} digit={} rep={}", f.method, f.nu, f.m, f.noise, f.digit, f.rep);
        }
        return Err(CliError {
            code: EXIT_NUMERIC,
            message: msg,
        });
    }
    Ok(())
}

fn cmd_eval(out: &Path, s: &EvalSettings) -> CliResult {
    match (&s.records, &s.image, &s.reference) {
        (Some(path), None, None) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let records = parse_records_csv(&text)?;
            let table = aggregate_to_csv(&aggregate(&records));
            prepare_out(out)?;
            write_manifest(out, "eval", s)?;
            write_text(&out.join("aggregate.csv"), &table)?;
            print!("{table}");
            Ok(())
        }
        (None, Some(image), Some(reference)) => {
            let a = GrayImage::load(image)?;
            let b = GrayImage::load(reference)?;
            if (a.width(), a.height()) != (b.width(), b.height()) {
                return Err(CliError::config("images differ in size"));
            }
            let r = pearson(a.pixels(), b.pixels());
            prepare_out(out)?;
            write_manifest(out, "eval", s)?;
            let text = serde_json::to_string_pretty(&json!({ "r": r })).map_err(Error::from)?;
            write_text(&out.join("eval.json"), &(text + "\n"))?;
            match r {
                Some(r) => println!("r = {r}"),
                None => println!("r undefined (constant image)"),
            }
            Ok(())
        }
        _ => Err(CliError::config("give either --eval.records, or --eval.image with --eval.reference")),
    }
}

fn cmd_export_fixture(out: &Path, s: &ExportSettings) -> CliResult {
    let arch = match s.arch.as_str() {
        "tiny" => Architecture::tiny(),
        "standard" => Architecture::standard(),
        other => return Err(CliError::config(format!("unknown fixture architecture '{other}'"))),
    };
    let model = random_model(&arch, s.seed)?;
    prepare_out(out)?;
    write_manifest(out, "export-fixture", s)?;
    save_model(&model, &out.join("generator.ggw1"))?;
    if s.per_class > 0 {
        let n = s.per_class * dataset::NUM_CLASSES;
        let images = (0..n)
            .map(|i| {
                let z = random_latent(model.latent_dim(), seed::derive(s.seed, &[Stream::Fixture as u64, i as u64]));
                model.decode(&z)
            })
            .collect::<crate::Result<Vec<_>>>()?;
        let labels: Vec<u8> = (0..n).map(|i| (i % dataset::NUM_CLASSES) as u8).collect();
        for split in [Split::Train, Split::Test] {
            let (ip, lp) = dataset::split_paths(out, split);
            dataset::write_idx_images(&ip, &images)?;
            dataset::write_idx_labels(&lp, &labels)?;
        }
    }
    println!("wrote fixture to {}", out.display());
    Ok(())
}

fn dispatch(command: &Command) -> CliResult {
    let common = command.common();
    let name = command.name();
    let out = &common.out;
    match command {
        Command::Speckle(a) => cmd_speckle(out, &resolve(name, common, a)?),
        Command::Measure(a) => cmd_measure(out, &resolve(name, common, a)?),
        Command::Reconstruct(a) => cmd_reconstruct(out, &resolve(name, common, a)?),
        Command::Sweep(a) => cmd_sweep(out, &mut resolve(name, common, a)?),
        Command::Eval(a) => cmd_eval(out, &resolve(name, common, a)?),
        Command::ExportFixture(a) => cmd_export_fixture(out, &resolve(name, common, a)?),
    }
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let common = cli.command.common();
    let level = match common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let result = match common.jobs {
        Some(0) => Err(CliError::config("--jobs must be at least 1")),
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(CliError {
                code: EXIT_FAILURE,
                message: e.to_string(),
            }),
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_classification() {
        assert_eq!(CliError::from(Error::arg("x")).code, EXIT_CONFIG);
        assert_eq!(CliError::from(Error::MissingArtifact("w".into())).code, EXIT_MISSING);
        assert_eq!(CliError::from(Error::Reconstruction("r".into())).code, EXIT_NUMERIC);
        let nf = Error::io("/nope", std::io::Error::from(ErrorKind::NotFound));
        assert_eq!(CliError::from(nf).code, EXIT_MISSING);
    }

    #[test]
    fn settings_keys_are_flat() {
        let v = serde_json::to_value(ReconstructSettings::default()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        for k in ["seed", "method", "speckle.nu", "measure.m", "recon.steps", "gan.weights", "bpdn.delta"] {
            assert!(keys.iter().any(|x| x == k), "missing {k}");
        }
    }
}
