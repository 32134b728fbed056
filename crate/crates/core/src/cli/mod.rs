//! Command-line front end. Reports go to stdout as canonical JSON (or CSV
//! where tabular), errors go to stderr as `{"error": {...}}`.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 I/O failure.

mod commands;
mod manifest;

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use manifest::{InputDigest, RunManifest};

use crate::canonical::to_canonical_json;
use crate::loss::{CeNormalisation, DiceClassMode};
use crate::ops::{read_input, AppError, ErrorKind};
use crate::postprocess::CrfBackend;
use crate::schema::ClassSchema;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_IO: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "terraseg", version, about = "Terrain segmentation evaluation and post-processing")]
pub struct Cli {
    /// Class schema JSON; the built-in ten-class schema when omitted.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Seed for every randomised step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving output artefacts and the run manifest.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Segmentation metrics over matching ground-truth/prediction masks.
    Eval(EvalArgs),
    /// Most-confused class pairs and the raw confusion matrix.
    Confusions(EvalArgs),
    /// Weighted cross-entropy, soft Dice and their combination.
    Loss(LossArgs),
    /// Checks a loss gradient against the analytic or finite-difference one.
    GradCheck(GradCheckArgs),
    /// Seeded flip and random resized crop over image/mask pairs.
    Augment(AugmentArgs),
    /// Pastes rare-class instances between image/mask pairs.
    CopyPaste(CopyPasteArgs),
    /// Converts a logits tensor to probabilities.
    Softmax(SoftmaxArgs),
    /// Merges test-time augmentation views.
    Tta(TtaArgs),
    /// Dense-CRF refinement of a probability tensor.
    Crf(CrfArgs),
    /// Entropy and confidence statistics of a probability tensor.
    Uncertainty(UncertaintyArgs),
    /// Aggregates Monte-Carlo sample tensors.
    McAggregate(McAggregateArgs),
    /// Ranks images by difficulty.
    Rank(RankArgs),
    /// Traversability costmap from a label mask.
    Costmap(CostmapArgs),
    /// Least-cost path over a costmap.
    Plan(PlanArgs),
    /// Colour overlay of a mask on its image.
    Overlay(OverlayArgs),
    /// HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Comma-separated class names left out of a secondary mIoU; repeatable.
    /// Defaults to Sky,Landscape.
    #[arg(long = "exclude")]
    pub exclude: Vec<String>,
    #[arg(long, default_value_t = crate::metrics::DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Accumulator shards (threads).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeNorm {
    WeightedMean,
    PixelMean,
}

impl From<CeNorm> for CeNormalisation {
    fn from(v: CeNorm) -> Self {
        match v {
            CeNorm::WeightedMean => CeNormalisation::WeightedMean,
            CeNorm::PixelMean => CeNormalisation::PixelMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiceClasses {
    Present,
    All,
}

impl From<DiceClasses> for DiceClassMode {
    fn from(v: DiceClasses) -> Self {
        match v {
            DiceClasses::Present => DiceClassMode::Present,
            DiceClasses::All => DiceClassMode::All,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LossOptions {
    #[arg(long, default_value_t = crate::loss::DEFAULT_LAMBDA_CE)]
    pub lambda_ce: f64,
    #[arg(long, default_value_t = crate::loss::DEFAULT_LAMBDA_DICE)]
    pub lambda_dice: f64,
    #[arg(long, default_value_t = crate::loss::DEFAULT_DICE_EPSILON)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = CeNorm::WeightedMean)]
    pub ce_normalisation: CeNorm,
    #[arg(long, value_enum, default_value_t = DiceClasses::Present)]
    pub dice_classes: DiceClasses,
}

#[derive(Debug, Args, Serialize)]
pub struct LossArgs {
    /// TST1 logits tensor.
    #[arg(long)]
    pub logits: PathBuf,
    /// Ground-truth mask PNG.
    #[arg(long)]
    pub mask: PathBuf,
    #[command(flatten)]
    pub options: LossOptions,
}

#[derive(Debug, Args, Serialize)]
pub struct GradCheckArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Externally computed gradient (TST1, same shape as the logits). When
    /// omitted the analytic gradient is checked against finite differences.
    #[arg(long)]
    pub gradient: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Magnitude below which errors are measured absolutely.
    #[arg(long, default_value_t = crate::loss::DEFAULT_GRADIENT_FLOOR)]
    pub floor: f64,
    #[command(flatten)]
    pub options: LossOptions,
}

#[derive(Debug, Args, Serialize)]
pub struct PairDirs {
    /// Directory of RGB images.
    #[arg(long)]
    pub images: PathBuf,
    /// Directory of masks with the same file names.
    #[arg(long)]
    pub masks: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub pairs: PairDirs,
    /// Output size as HxW; the source size when omitted.
    #[arg(long, value_parser = parse_size)]
    pub out_size: Option<(usize, usize)>,
    /// Crop area range relative to the source, as LO,HI.
    #[arg(long, value_parser = parse_range, default_value = "0.5,2.0")]
    pub crop_scale: (f64, f64),
    #[arg(long, default_value_t = 0.5)]
    pub flip_probability: f64,
    /// Also write ImageNet-normalised tensors.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct CopyPasteArgs {
    #[command(flatten)]
    pub pairs: PairDirs,
    /// Copy-paste configuration JSON; rare classes by name or index.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SoftmaxArgs {
    #[arg(long)]
    pub logits: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TtaArgs {
    /// View output as PATH[:hflip][:scale=S]; repeatable.
    #[arg(long = "view", required = true)]
    pub views: Vec<String>,
    /// Base geometry as HxW; taken from an unscaled view when omitted.
    #[arg(long, value_parser = parse_size)]
    pub base_size: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Auto,
    Exact,
    Lattice,
}

impl From<Backend> for CrfBackend {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Auto => CrfBackend::Auto,
            Backend::Exact => CrfBackend::Exact,
            Backend::Lattice => CrfBackend::Lattice,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CrfArgs {
    #[arg(long)]
    pub probs: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long, default_value_t = 3.0)]
    pub w_smooth: f64,
    #[arg(long, default_value_t = 3.0)]
    pub theta_gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub w_bilateral: f64,
    #[arg(long, default_value_t = 80.0)]
    pub theta_alpha: f64,
    #[arg(long, default_value_t = 13.0)]
    pub theta_beta: f64,
    #[arg(long, value_enum, default_value_t = Backend::Auto)]
    pub backend: Backend,
}

#[derive(Debug, Args, Serialize)]
pub struct BlendArgs {
    /// Normalised-entropy threshold for uncertain pixels.
    #[arg(long, default_value_t = crate::postprocess::DEFAULT_ENTROPY_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub uncertain_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub confidence_weight: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct UncertaintyArgs {
    #[arg(long)]
    pub probs: PathBuf,
    #[command(flatten)]
    pub blend: BlendArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct McAggregateArgs {
    /// Sample probability tensors; repeatable.
    #[arg(long = "sample", required = true)]
    pub samples: Vec<PathBuf>,
    #[command(flatten)]
    pub blend: BlendArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    /// Directory of probability tensors (`*.tst1`).
    #[arg(long, conflicts_with = "reports_dir", required_unless_present = "reports_dir")]
    pub probs_dir: Option<PathBuf>,
    /// Directory of uncertainty report JSON files.
    #[arg(long)]
    pub reports_dir: Option<PathBuf>,
    #[command(flatten)]
    pub blend: BlendArgs,
    #[arg(long, default_value_t = 0.15)]
    pub well_below: f64,
    #[arg(long, default_value_t = 0.30)]
    pub high_at_least: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct CostArgs {
    #[arg(long, default_value_t = 1.0)]
    pub safe_cost: f64,
    #[arg(long, default_value_t = 10.0)]
    pub caution_cost: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct CostmapArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[command(flatten)]
    pub costs: CostArgs,
    /// Row-major 3x3 homography as nine comma-separated reals.
    #[arg(long, value_parser = parse_homography)]
    pub homography: Option<[[f64; 3]; 3]>,
    /// Projected grid size as HxW.
    #[arg(long, value_parser = parse_size)]
    pub out_size: Option<(usize, usize)>,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    /// 16-bit costmap PNG.
    #[arg(long)]
    pub costmap: PathBuf,
    /// Sidecar JSON written with the costmap; supplies the tier costs.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub costs: CostArgs,
    /// Start cell as ROW,COL.
    #[arg(long, value_parser = parse_cell)]
    pub start: (usize, usize),
    /// Goal cell as ROW,COL.
    #[arg(long, value_parser = parse_cell)]
    pub goal: (usize, usize),
    /// Keep this many cells (Chebyshev) away from obstacles.
    #[arg(long, default_value_t = 0)]
    pub clearance: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct OverlayArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Request body limit in bytes.
    #[arg(long, env = "TERRASEG_MAX_BODY_BYTES", default_value_t = crate::service::DEFAULT_MAX_BODY_BYTES)]
    pub max_body_bytes: usize,
}

fn parse_pair<T: std::str::FromStr>(s: &str, sep: char, what: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(sep).ok_or_else(|| format!("expected {what}"))?;
    let a = a.trim().parse().map_err(|_| format!("expected {what}"))?;
    let b = b.trim().parse().map_err(|_| format!("expected {what}"))?;
    Ok((a, b))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = parse_pair::<usize>(&s.to_ascii_lowercase(), 'x', "HxW")?;
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    parse_pair(s, ',', "ROW,COL")
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    parse_pair(s, ',', "LO,HI")
}

fn parse_homography(s: &str) -> Result<[[f64; 3]; 3], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("homography: {e}"))?;
    if values.len() != 9 {
        return Err(format!("homography needs 9 values, got {}", values.len()));
    }
    Ok([
        [values[0], values[1], values[2]],
        [values[3], values[4], values[5]],
        [values[6], values[7], values[8]],
    ])
}

/// Shared state for one invocation.
pub(crate) struct Context {
    pub schema: ClassSchema,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Format,
    inputs: RefCell<Vec<InputDigest>>,
}

impl Context {
    /// Reads a file and records its digest for the manifest.
    pub fn read(&self, path: &Path) -> Result<Vec<u8>, AppError> {
        let bytes = read_input(path)?;
        self.inputs.borrow_mut().push(InputDigest::of(path, &bytes));
        Ok(bytes)
    }

    pub fn output_dir(&self, command: &str) -> Result<&Path, AppError> {
        self.output
            .as_deref()
            .ok_or_else(|| AppError::validation("MissingOutput", format!("`{command}` writes files and needs --output")))
    }
}

/// Result of a subcommand before it is written out.
pub(crate) struct Outcome {
    pub stdout: String,
    /// Files relative to the output directory.
    pub files: Vec<(PathBuf, Vec<u8>)>,
    /// Non-zero exit after printing `stdout`.
    pub failure: Option<AppError>,
}

impl Outcome {
    pub fn json<T: Serialize + ?Sized>(value: &T) -> Self {
        Outcome {
            stdout: to_canonical_json(value),
            files: Vec::new(),
            failure: None,
        }
    }

    pub fn with_file(mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) -> Self {
        self.files.push((name.into(), bytes));
        self
    }
}

fn exit_code(err: &AppError) -> u8 {
    match err.kind {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Io => EXIT_IO,
    }
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let command_line = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match execute(cli, &command_line) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(err) => {
            eprint!("{}", err.to_json());
            ExitCode::from(exit_code(&err))
        }
    }
}

fn execute(cli: Cli, command_line: &str) -> Result<(), AppError> {
    let mut inputs = Vec::new();
    let schema = match &cli.schema {
        None => ClassSchema::default(),
        Some(path) => {
            let bytes = read_input(path)?;
            inputs.push(InputDigest::of(path, &bytes));
            let text = String::from_utf8(bytes)
                .map_err(|_| AppError::validation("Parse", format!("{} is not UTF-8", path.display())))?;
            ClassSchema::from_json(&text)?
        }
    };
    let ctx = Context {
        schema,
        seed: cli.seed,
        output: cli.output.clone(),
        format: cli.format,
        inputs: RefCell::new(inputs),
    };
    if let Command::Serve(args) = &cli.command {
        return commands::serve(&ctx, args);
    }
    let outcome = commands::dispatch(&ctx, &cli.command)?;
    if let Some(dir) = &ctx.output {
        let mut written = Vec::new();
        for (name, bytes) in &outcome.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| AppError::io(parent, &e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| AppError::io(&path, &e))?;
            written.push(name.to_string_lossy().into_owned());
        }
        let manifest = RunManifest::new(
            command_line,
            &cli.command,
            &ctx.schema,
            ctx.seed,
            ctx.inputs.borrow().clone(),
            written,
        );
        let path = dir.join("manifest.json");
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, &e))?;
        std::fs::write(&path, to_canonical_json(&manifest)).map_err(|e| AppError::io(&path, &e))?;
    }
    print!("{}", outcome.stdout);
    match outcome.failure {
        Some(err) => Err(err),
        None => Ok(()),
    }
}
