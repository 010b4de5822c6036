//! The `semshap` command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use image::RgbImage;
use serde::Serialize;

use crate::analysis::{
    agreement, default_budgets, normalize_by_coverage, sampling_error_experiment, DEFAULT_RBO_P,
};
use crate::bridge::{serve, CaptionModel, ModelSpec, RegionOracle};
use crate::error::{Error, ErrorClass, Result};
use crate::features::{
    dff_masks, enforce_disjoint, load_external_masks, superpixel_masks, vit_dff_masks,
    ActivationTensor, DffConfig, DisjointPolicy, FeatureSet, NmfConfig, VitConfig, DEFAULT_K,
    DEFAULT_THETA,
};
use crate::game::{make_sentence_game, Baseline, EmbedderChoice, GameConfig, DEFAULT_EMBEDDING_DIM};
use crate::record::{DistanceAudit, ExplanationRecord, FeatureConfig};
use crate::render::{mask_image, render_attribution_map, RenderMode};
use crate::shapley::{explain, ExplainConfig, Explanation, SamplerKind, SelectionWeighting};

/// Budget used by the sampling samplers when `--budget` is absent.
pub const DEFAULT_BUDGET: usize = 2048;

#[derive(Debug, Parser)]
#[command(name = "semshap", version, about = "Sentence-level Shapley explanations for image captioners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explain a caption: features, Shapley values, record and attribution map.
    Explain(ExplainArgs),
    /// Post-hoc analyses of explanations.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Serve the synthetic region oracle over the bridge protocol on stdio.
    ServeOracle {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Rank-biased overlap between the attributions of two records.
    Rbo {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RBO_P)]
        p: f64,
    },
    /// Divide each attribution by its mask's image coverage.
    Normalize {
        record: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RBO_P)]
        p: f64,
        /// Write the result here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Priority vs Monte Carlo error against exact values on one image.
    SamplingError(SamplingErrorArgs),
}

/// What to build the feature set from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    Dff,
    Vit,
    Superpixel,
    Masks(PathBuf),
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dff" => Ok(FeatureSource::Dff),
            "vit" => Ok(FeatureSource::Vit),
            "superpixel" => Ok(FeatureSource::Superpixel),
            other => other
                .strip_prefix("masks:")
                .filter(|p| !p.is_empty())
                .map(|p| FeatureSource::Masks(p.into()))
                .ok_or_else(|| Error::Config(format!("unknown feature source `{other}`"))),
        }
    }
}

/// Superpixel grid, written `RxC`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("grid `{s}` is not of the form RxC"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        Ok(Grid {
            rows: r.trim().parse().map_err(|_| bad())?,
            cols: c.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// `lowest` or `seed:<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DisjointArg(pub DisjointPolicy);

impl FromStr for DisjointArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "lowest" {
            return Ok(DisjointArg(DisjointPolicy::LowestIndex));
        }
        s.strip_prefix("seed:")
            .and_then(|n| n.parse().ok())
            .map(|n| DisjointArg(DisjointPolicy::SeededRandom(n)))
            .ok_or_else(|| Error::Config(format!("unknown disjoint policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderArg {
    Hashed,
    Model,
}

impl FromStr for EmbedderArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hashed" => Ok(EmbedderArg::Hashed),
            "model" => Ok(EmbedderArg::Model),
            other => Err(Error::Config(format!("unknown embedder `{other}`"))),
        }
    }
}

/// Model, features and game settings shared by `explain` and `sampling-error`.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// `oracle:<config.json>` or a command that speaks the bridge protocol.
    #[arg(long)]
    pub model: ModelSpec,
    #[arg(long)]
    pub question: Option<String>,
    /// dff, vit, superpixel or masks:<path>.
    #[arg(long)]
    pub features: FeatureSource,
    /// Number of factors for dff and vit.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Binarisation threshold for dff, band threshold for vit.
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long, default_value = "4x4")]
    pub grid: Grid,
    /// Raw activation file (with JSON sidecar) used instead of asking the model.
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// Make features disjoint: `lowest` or `seed:<n>`.
    #[arg(long)]
    pub disjoint: Option<DisjointArg>,
    /// black, mean or blur:<radius>.
    #[arg(long, default_value = "black")]
    pub baseline: Baseline,
    /// hashed (built-in n-gram embedding) or model (the model's embed op).
    #[arg(long, default_value = "hashed")]
    pub embedder: EmbedderArg,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub image: Option<PathBuf>,
    /// File listing one image path per line; each gets its own output directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value = "priority")]
    pub sampler: SamplerKind,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "intensity")]
    pub render: RenderMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SamplingErrorArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Strictly decreasing budgets; defaults to 2^(M-1), 2^(M-2), 2^(M-3).
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Input => 1,
        ErrorClass::Model => 2,
        ErrorClass::Numerical => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Explain(args) => run_explain(&args),
        Command::Analyze(cmd) => run_analyze(cmd),
        Command::ServeOracle { config } => {
            let oracle = RegionOracle::from_file(&config)?;
            serve(&oracle, std::io::stdin().lock(), std::io::stdout().lock())
        }
    }
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::Input(format!("image not found: {}", path.display())));
    }
    Ok(image::open(path)?.to_rgb8())
}

fn model_activations(
    model: &dyn CaptionModel,
    pipeline: &PipelineArgs,
    image: &RgbImage,
) -> Result<ActivationTensor> {
    match &pipeline.activations {
        Some(path) => ActivationTensor::read_raw(path),
        None => model.activations(image),
    }
}

pub fn build_features(
    model: &dyn CaptionModel,
    pipeline: &PipelineArgs,
    image: &RgbImage,
) -> Result<FeatureSet> {
    let dims = (image.height() as usize, image.width() as usize);
    let fs = match &pipeline.features {
        FeatureSource::Superpixel => superpixel_masks(dims, pipeline.grid.rows, pipeline.grid.cols)?,
        FeatureSource::Masks(path) => load_external_masks(path, Some(dims))?,
        FeatureSource::Dff => {
            let act = model_activations(model, pipeline, image)?.rectified();
            let config = DffConfig {
                k: pipeline.k,
                theta: pipeline.theta,
                nmf: NmfConfig::default(),
            };
            dff_masks(&act, dims, &config)?
        }
        FeatureSource::Vit => {
            let act = model_activations(model, pipeline, image)?;
            let config = VitConfig {
                k: pipeline.k,
                band_threshold: pipeline.theta,
                nmf: NmfConfig::default(),
            };
            vit_dff_masks(&act, dims, &config)?
        }
    };
    Ok(match pipeline.disjoint {
        Some(DisjointArg(policy)) => enforce_disjoint(&fs, policy),
        None => fs,
    })
}

fn game_config(pipeline: &PipelineArgs) -> GameConfig {
    GameConfig {
        baseline: pipeline.baseline,
        embedder: match pipeline.embedder {
            EmbedderArg::Hashed => EmbedderChoice::HashedNgram {
                dim: DEFAULT_EMBEDDING_DIM,
            },
            EmbedderArg::Model => EmbedderChoice::Model,
        },
        ..GameConfig::default()
    }
}

fn explain_config(args: &ExplainArgs) -> ExplainConfig {
    ExplainConfig {
        sampler: args.sampler,
        budget: match args.sampler {
            SamplerKind::Exact => None,
            _ => Some(args.budget.unwrap_or(DEFAULT_BUDGET)),
        },
        seed: args.seed,
        weighting: SelectionWeighting::Kernel,
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Everything `explain` writes, computed before anything touches the disk.
struct ExplainOutputs {
    record: ExplanationRecord,
    features: FeatureSet,
    map: crate::render::AttributionMap,
}

fn explain_image(
    model: &dyn CaptionModel,
    image_path: &Path,
    args: &ExplainArgs,
) -> Result<ExplainOutputs> {
    let start = Instant::now();
    let mut timings = BTreeMap::new();
    let image = load_image(image_path)?;

    let t = Instant::now();
    let features = build_features(model, &args.pipeline, &image)?;
    timings.insert("features".to_string(), ms(t));

    let t = Instant::now();
    let game_config = game_config(&args.pipeline);
    let game = make_sentence_game(
        model,
        &image,
        &features,
        &game_config,
        args.pipeline.question.as_deref(),
    )?;
    timings.insert("reference".to_string(), ms(t));

    let t = Instant::now();
    let explanation = explain(&game, features.len(), &explain_config(args))?;
    timings.insert("shapley".to_string(), ms(t));

    let t = Instant::now();
    let map = render_attribution_map(&explanation, &features, args.render)?;
    timings.insert("render".to_string(), ms(t));
    timings.insert("total".to_string(), ms(start));

    log::info!(
        "{}: {} features, {} coalitions, residual {:.3e}",
        image_path.display(),
        features.len(),
        explanation.evaluated,
        explanation.efficiency_residual()
    );
    let record = ExplanationRecord {
        efficiency_residual: explanation.efficiency_residual(),
        distance: DistanceAudit::of(&explanation),
        feature_config: FeatureConfig::describe(&features),
        game_config,
        reference_caption: game.reference_caption().to_string(),
        question: args.pipeline.question.clone(),
        render_mode: args.render,
        timings_ms: timings,
        model_caption_calls: Some(game.caption_calls()),
        explanation,
    };
    Ok(ExplainOutputs {
        record,
        features,
        map,
    })
}

fn write_outputs(dir: &Path, outputs: &ExplainOutputs) -> Result<()> {
    fs::write(dir.join("record.json"), outputs.record.to_json()?)?;
    fs::write(dir.join("attribution.f32"), outputs.map.to_f32_le_bytes())?;
    fs::write(
        dir.join("attribution.json"),
        serde_json::to_string_pretty(&outputs.map.sidecar())?,
    )?;
    outputs.map.to_image().save(dir.join("attribution.png"))?;
    let masks = dir.join("masks");
    fs::create_dir(&masks)?;
    for (i, mask) in outputs.features.masks().iter().enumerate() {
        mask_image(mask).save(masks.join(format!("mask_{i}.png")))?;
    }
    Ok(())
}

/// Writes into a staging directory next to `out`, then moves the results in,
/// so a failed run leaves `out` untouched.
fn commit_outputs(out: &Path, outputs: &ExplainOutputs) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new()
        .prefix(".semshap-staging-")
        .tempdir_in(&parent)?;
    write_outputs(staging.path(), outputs)?;
    if !out.exists() {
        fs::rename(staging.keep(), out)?;
        return Ok(());
    }
    for entry in fs::read_dir(staging.path())? {
        let entry = entry?;
        let target = out.join(entry.file_name());
        if target.is_dir() {
            fs::remove_dir_all(&target)?;
        }
        fs::rename(entry.path(), target)?;
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let images: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if images.is_empty() {
        return Err(Error::Input(format!("manifest {} lists no images", path.display())));
    }
    Ok(images)
}

/// Output subdirectory per manifest entry: the file stem, suffixed on clashes.
fn manifest_dirs(images: &[PathBuf]) -> Vec<String> {
    let mut seen = BTreeMap::<String, usize>::new();
    images
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}_{n}")
            }
        })
        .collect()
}

pub fn run_explain(args: &ExplainArgs) -> Result<()> {
    let images = match (&args.image, &args.manifest) {
        (Some(image), _) => vec![image.clone()],
        (None, Some(manifest)) => read_manifest(manifest)?,
        (None, None) => return Err(Error::Config("need --image or --manifest".into())),
    };
    if args.image.is_some() && !images[0].is_file() {
        // fail before launching a model
        return Err(Error::Input(format!("image not found: {}", images[0].display())));
    }
    let model = args.pipeline.model.connect()?;

    if args.manifest.is_none() {
        let outputs = explain_image(model.as_ref(), &images[0], args)?;
        return commit_outputs(&args.out, &outputs);
    }
    let mut first_error = None;
    for (image, dir) in images.iter().zip(manifest_dirs(&images)) {
        let result = explain_image(model.as_ref(), image, args)
            .and_then(|outputs| commit_outputs(&args.out.join(&dir), &outputs));
        if let Err(e) = result {
            log::error!("{}: {e}", image.display());
            first_error.get_or_insert(e);
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn read_explanation(path: &Path) -> Result<(Explanation, Option<FeatureConfig>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(record) = ExplanationRecord::from_json(&text) {
        return Ok((record.explanation, Some(record.feature_config)));
    }
    Ok((serde_json::from_str(&text)?, None))
}

#[derive(Serialize)]
struct NormalizeOutput {
    normalized: Explanation,
    agreement: crate::analysis::RankAgreement,
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn print_out(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    print_out(&(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn run_analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Rbo { a, b, p } => {
            let (ea, _) = read_explanation(&a)?;
            let (eb, _) = read_explanation(&b)?;
            print_json(&agreement(&ea, &eb, p)?)
        }
        AnalyzeCommand::Normalize { record, p, out } => {
            let (e, features) = read_explanation(&record)?;
            let features = features.ok_or_else(|| {
                Error::Input(format!("{} is not an explanation record", record.display()))
            })?;
            let (h, w) = features.image_dims;
            let normalized = normalize_by_coverage(&e, &features.mask_areas, h * w)?;
            let output = NormalizeOutput {
                agreement: agreement(&e, &normalized, p)?,
                normalized,
            };
            match out {
                Some(path) => Ok(fs::write(path, serde_json::to_string_pretty(&output)?)?),
                None => print_json(&output),
            }
        }
        AnalyzeCommand::SamplingError(args) => run_sampling_error(&args),
    }
}

fn run_sampling_error(args: &SamplingErrorArgs) -> Result<()> {
    let image = load_image(&args.image)?;
    let model = args.pipeline.model.connect()?;
    let features = build_features(model.as_ref(), &args.pipeline, &image)?;
    let game = make_sentence_game(
        model.as_ref(),
        &image,
        &features,
        &game_config(&args.pipeline),
        args.pipeline.question.as_deref(),
    )?;
    let players = features.len();
    let budgets = if args.budgets.is_empty() {
        default_budgets(players)
    } else {
        args.budgets.clone()
    };
    let report = sampling_error_experiment(&game, players, &budgets, args.runs, args.seed)?;

    fs::create_dir_all(&args.out)?;
    report.write_csv(fs::File::create(args.out.join("sampling_error.csv"))?)?;
    fs::write(args.out.join("sampling_error.json"), report.to_json()?)?;
    let mut summary = String::new();
    for (i, budget) in report.budgets.iter().enumerate() {
        summary += &format!(
            "budget {budget:>6}: priority MSE {:.3e}, Monte Carlo MSE {:.3e} ± {:.1e}\n",
            report.mse_priority[i], report.mse_montecarlo_mean[i], report.mse_montecarlo_std[i]
        );
    }
    print_out(&summary)
}
