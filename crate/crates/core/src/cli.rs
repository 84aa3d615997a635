//! Command-line front end. `main.rs` only forwards to [`run`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::coop::{coop_prompt_pair, train_coop, ContextVectors, CoopConfig};
use crate::encoder::{EncoderConfig, ImageEncoder, TextEncoder};
use crate::eval::{
    confusion, emit_report, metrics, run_experiment_matrix, EmbeddingTable, MatrixConfig, Method, ReportFormat,
};
use crate::ingest::{load_manifest, DatasetKind, LabelThresholds, Modality, Radiometry, Split};
use crate::pipeline::{labeled_pairs, thread_pool, EmbeddedScene, EmbeddingCache, ScenePipeline};
use crate::probe::{fuse_radar_features, predict_probe, train_probe, ProbeModel, TrainConfig};
use crate::tensorstore::{load_archive, TensorArchive};
use crate::tokenizer::{load_vocabulary, Vocabulary};
use crate::verdict::{Label, Verdict};
use crate::zeroshot::{classify_zero_shot, PromptPair, DEFAULT_NEGATIVE_PROMPT, DEFAULT_POSITIVE_PROMPT};

/// Vocabulary file looked up next to the weights when `--vocab` is absent.
pub const DEFAULT_VOCAB_NAME: &str = "vocab.bundle";

#[derive(Debug, Parser)]
#[command(name = "cloudgate", version, about = "Cloud presence detection for satellite image tiles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check weights, vocabulary and manifests.
    Validate(ValidateArgs),
    /// Encode every scene of a manifest into an embedding cache.
    Embed(EmbedArgs),
    /// Classify scenes with the two text prompts.
    Zeroshot(ZeroshotArgs),
    /// Train a linear probe on image embeddings.
    TrainProbe(TrainProbeArgs),
    /// Train CoOp context vectors.
    TrainCoop(TrainCoopArgs),
    /// Run the full train/test experiment matrix.
    Evaluate(EvaluateArgs),
    /// Keep/discard decisions for every scene of a manifest.
    Filter(FilterArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model weights (CGT1 archive).
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Tokenizer vocabulary bundle [default: vocab.bundle next to the weights].
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
}

impl ModelArgs {
    fn vocab_path(&self) -> PathBuf {
        self.vocab.clone().unwrap_or_else(|| {
            self.weights
                .parent()
                .unwrap_or(Path::new("."))
                .join(DEFAULT_VOCAB_NAME)
        })
    }

    fn load_archive(&self) -> Result<TensorArchive> {
        load_archive(&self.weights).with_context(|| format!("loading weights {}", self.weights.display()))
    }

    fn load_vocab(&self) -> Result<Vocabulary> {
        let p = self.vocab_path();
        load_vocabulary(&p).with_context(|| format!("loading vocabulary {}", p.display()))
    }
}

/// Where scene embeddings come from: a manifest encoded on the fly, or a
/// cache written by `embed`.
#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Dataset manifest (JSON lines).
    #[arg(long, value_name = "FILE", conflicts_with = "cache")]
    pub manifest: Option<PathBuf>,
    /// Embedding cache from `embed`.
    #[arg(long, value_name = "FILE")]
    pub cache: Option<PathBuf>,
    /// Input modality: S2/RGB, L8/RGB, L8/B6-B4 or S1/SAR.
    #[arg(long, value_name = "TAG", default_value = "S2/RGB")]
    pub modality: Modality,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct LabelArgs {
    /// Largest cloud fraction still labeled clear.
    #[arg(long, value_name = "F", default_value_t = LabelThresholds::default().clear_max)]
    pub clear_max: f32,
    /// Smallest cloud fraction labeled cloudy.
    #[arg(long, value_name = "F", default_value_t = LabelThresholds::default().cloudy_min)]
    pub cloudy_min: f32,
}

impl LabelArgs {
    fn thresholds(&self) -> Result<LabelThresholds> {
        if !(0.0..=1.0).contains(&self.clear_max) || !(0.0..=1.0).contains(&self.cloudy_min) || self.cloudy_min < self.clear_max
        {
            bail!("label thresholds must satisfy 0 <= clear-max <= cloudy-min <= 1");
        }
        Ok(LabelThresholds {
            clear_max: self.clear_max,
            cloudy_min: self.cloudy_min,
        })
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Model weights to check, together with their vocabulary.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Vocabulary bundle [default: vocab.bundle next to the weights].
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Manifest to check; may be repeated.
    #[arg(long, value_name = "FILE")]
    pub manifest: Vec<PathBuf>,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset manifest (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Input modality: S2/RGB, L8/RGB, L8/B6-B4 or S1/SAR.
    #[arg(long, value_name = "TAG", default_value = "S2/RGB")]
    pub modality: Modality,
    /// Output cache file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Keep scenes whose mask-derived label is ambiguous, as unlabeled.
    #[arg(long)]
    pub keep_excluded: bool,
    #[command(flatten)]
    pub labels: LabelArgs,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Prompt describing a cloudy image.
    #[arg(long, value_name = "TEXT", default_value = DEFAULT_POSITIVE_PROMPT)]
    pub positive: String,
    /// Prompt describing a clear image.
    #[arg(long, value_name = "TEXT", default_value = DEFAULT_NEGATIVE_PROMPT)]
    pub negative: String,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub scenes: SceneArgs,
    #[command(flatten)]
    pub prompts: PromptArgs,
    /// Verdicts as JSON lines [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainProbeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub scenes: SceneArgs,
    /// Concatenate the SAR composite embedding of each scene.
    #[arg(long)]
    pub with_sar: bool,
    /// SAR embedding cache, used with --cache and --with-sar.
    #[arg(long, value_name = "FILE", requires = "with_sar")]
    pub sar_cache: Option<PathBuf>,
    /// Seed for batch sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optimizer steps.
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    pub steps: usize,
    /// Scenes per step.
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    /// Output probe file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainCoopArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub scenes: SceneArgs,
    /// Seed for context initialization and batch sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of learned context tokens.
    #[arg(long, default_value_t = CoopConfig::default().m_context)]
    pub m_context: usize,
    /// Optimizer steps.
    #[arg(long, default_value_t = CoopConfig::default().steps)]
    pub steps: usize,
    /// Scenes per step.
    #[arg(long, default_value_t = CoopConfig::default().batch_size)]
    pub batch_size: usize,
    /// SGD learning rate.
    #[arg(long, default_value_t = CoopConfig::default().learning_rate)]
    pub learning_rate: f32,
    /// Output context file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// CloudSEN12 manifest (S2 optical plus S1 SAR bands).
    #[arg(long, value_name = "FILE")]
    pub cloudsen12: Option<PathBuf>,
    /// SPARCS manifest (L8 bands).
    #[arg(long, value_name = "FILE")]
    pub sparcs: Option<PathBuf>,
    /// Comma-separated subset of text-prompts,linear-probe,coop,radar, or `all`.
    #[arg(long, default_value = "all", value_parser = Method::parse_list)]
    pub methods: MethodList,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Output directory for matrix.json and matrix.md.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub labels: LabelArgs,
}

pub type MethodList = Vec<Method>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Discard scenes confidently classified cloudy.
    DiscardCloudy,
    /// Discard scenes confidently classified clear.
    DiscardClear,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub scenes: SceneArgs,
    /// Linear probe file; without --probe or --coop the text prompts are used.
    #[arg(long, value_name = "FILE", conflicts_with = "coop")]
    pub probe: Option<PathBuf>,
    /// CoOp context file.
    #[arg(long, value_name = "FILE")]
    pub coop: Option<PathBuf>,
    /// SAR embedding cache for radar probes used with --cache.
    #[arg(long, value_name = "FILE")]
    pub sar_cache: Option<PathBuf>,
    #[command(flatten)]
    pub prompts: PromptArgs,
    /// Minimum confidence for a discard.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Which verdict leads to a discard.
    #[arg(long, value_enum, default_value_t = FilterMode::DiscardCloudy)]
    pub mode: FilterMode,
    /// Decisions as JSON lines [default: stdout].
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Keep,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub scene_id: String,
    pub verdict: Verdict,
    pub action: Action,
    pub threshold: f32,
}

impl FilterDecision {
    pub fn decide(scene_id: &str, verdict: Verdict, threshold: f32, mode: FilterMode) -> Self {
        let target = match mode {
            FilterMode::DiscardCloudy => Label::Cloudy,
            FilterMode::DiscardClear => Label::Clear,
        };
        let action = if verdict.label == target && verdict.confidence >= threshold {
            Action::Discard
        } else {
            Action::Keep
        };
        Self {
            scene_id: scene_id.to_string(),
            verdict,
            action,
            threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub keep: usize,
    pub discard: usize,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let pool = thread_pool()?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Validate(a) => cmd_validate(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Zeroshot(a) => cmd_zeroshot(&a),
        Command::TrainProbe(a) => cmd_train_probe(&a),
        Command::TrainCoop(a) => cmd_train_coop(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Filter(a) => cmd_filter(&a),
    }
}

fn model_id(archive: &TensorArchive) -> String {
    archive.meta("model_id").unwrap_or("unknown").to_string()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let mut problems: Vec<String> = Vec::new();
    if let Some(w) = &a.weights {
        match load_archive(w) {
            Ok(archive) => {
                let checks = EncoderConfig::from_archive(&archive)
                    .map(|_| ())
                    .and_then(|_| TextEncoder::<f32>::new(&archive).map(|_| ()))
                    .and_then(|_| ImageEncoder::new(&archive).map(|_| ()));
                if let Err(e) = checks {
                    problems.push(format!("{}: {e}", w.display()));
                } else {
                    println!("weights ok: {} ({} tensors)", w.display(), archive.entries().len());
                }
                let vocab_path = a.vocab.clone().unwrap_or_else(|| w.with_file_name(DEFAULT_VOCAB_NAME));
                match load_vocabulary(&vocab_path) {
                    Ok(v) => {
                        let expected = archive.meta_usize("vocab_size").ok();
                        if expected.is_some_and(|n| n != v.size()) {
                            problems.push(format!(
                                "{}: {} tokens, weights expect {}",
                                vocab_path.display(),
                                v.size(),
                                expected.unwrap_or_default()
                            ));
                        } else {
                            println!("vocab ok: {} ({} tokens)", vocab_path.display(), v.size());
                        }
                    }
                    Err(e) => problems.push(format!("{}: {e}", vocab_path.display())),
                }
            }
            Err(e) => problems.push(format!("{}: {e}", w.display())),
        }
    } else if let Some(v) = &a.vocab {
        match load_vocabulary(v) {
            Ok(voc) => println!("vocab ok: {} ({} tokens)", v.display(), voc.size()),
            Err(e) => problems.push(format!("{}: {e}", v.display())),
        }
    }
    let thresholds = a.labels.thresholds()?;
    for m in &a.manifest {
        match load_manifest(m) {
            Ok(manifest) => {
                let found = manifest.validate_files(&thresholds);
                if found.is_empty() {
                    println!("manifest ok: {} ({} scenes)", m.display(), manifest.records.len());
                }
                problems.extend(found.into_iter().map(|p| format!("{}: {p}", m.display())));
            }
            Err(e) => problems.push(format!("{}: {e}", m.display())),
        }
    }
    if a.weights.is_none() && a.vocab.is_none() && a.manifest.is_empty() {
        bail!("nothing to validate: pass --weights, --vocab or --manifest");
    }
    for p in &problems {
        eprintln!("{p}");
    }
    if !problems.is_empty() {
        bail!("{} problem(s) found", problems.len());
    }
    Ok(())
}

fn embed_from_manifest(
    archive: &TensorArchive,
    manifest: &Path,
    modality: Modality,
    thresholds: LabelThresholds,
    skip_excluded: bool,
) -> Result<Vec<EmbeddedScene>> {
    let manifest = load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    let pipeline = ScenePipeline::new(archive, Radiometry::default(), thresholds)?;
    Ok(pipeline.embed_manifest(&manifest, modality, skip_excluded)?)
}

fn load_cache(path: &Path, archive: &TensorArchive, modality: Option<Modality>) -> Result<EmbeddingCache> {
    let cache = EmbeddingCache::load(path).with_context(|| format!("loading cache {}", path.display()))?;
    if cache.model_id != model_id(archive) {
        bail!(
            "cache {} was built with model `{}`, weights are `{}`",
            path.display(),
            cache.model_id,
            model_id(archive)
        );
    }
    if let Some(m) = modality {
        if cache.modality != m {
            bail!("cache {} holds {} embeddings, expected {m}", path.display(), cache.modality);
        }
    }
    Ok(cache)
}

/// Embeddings for the optical modality and, when `with_sar`, the SAR composite.
fn scene_embeddings(
    archive: &TensorArchive,
    scenes: &SceneArgs,
    with_sar: bool,
    sar_cache: Option<&Path>,
    skip_excluded: bool,
) -> Result<(Vec<EmbeddedScene>, Option<Vec<EmbeddedScene>>)> {
    let thresholds = scenes.labels.thresholds()?;
    match (&scenes.manifest, &scenes.cache) {
        (Some(m), None) => {
            let optical = embed_from_manifest(archive, m, scenes.modality, thresholds, skip_excluded)?;
            let sar = if with_sar {
                Some(embed_from_manifest(archive, m, Modality::S1SarFc, thresholds, skip_excluded)?)
            } else {
                None
            };
            Ok((optical, sar))
        }
        (None, Some(c)) => {
            let optical = load_cache(c, archive, Some(scenes.modality))?.scenes;
            let sar = match (with_sar, sar_cache) {
                (false, _) => None,
                (true, Some(p)) => Some(load_cache(p, archive, Some(Modality::S1SarFc))?.scenes),
                (true, None) => bail!("radar features from a cache need --sar-cache"),
            };
            Ok((optical, sar))
        }
        _ => bail!("pass exactly one of --manifest or --cache"),
    }
}

struct FusedScene {
    id: String,
    label: Option<Label>,
    split: Split,
    features: Vec<f32>,
}

fn fuse_scenes(optical: &[EmbeddedScene], sar: &[EmbeddedScene]) -> Result<Vec<FusedScene>> {
    let by_id: std::collections::HashMap<&str, &EmbeddedScene> = sar.iter().map(|s| (s.id.as_str(), s)).collect();
    optical
        .iter()
        .map(|o| {
            let s = by_id
                .get(o.id.as_str())
                .ok_or_else(|| anyhow!("scene `{}` has no SAR embedding", o.id))?;
            Ok(FusedScene {
                id: o.id.clone(),
                label: o.label,
                split: o.split,
                features: fuse_radar_features(&o.embedding, &s.embedding)?,
            })
        })
        .collect()
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    let archive = a.model.load_archive()?;
    let scenes = embed_from_manifest(&archive, &a.manifest, a.modality, a.labels.thresholds()?, !a.keep_excluded)?;
    let n = scenes.len();
    EmbeddingCache::new(a.modality, model_id(&archive), scenes)
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("embedded {n} scenes into {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SceneVerdict<'a> {
    scene_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    verdict: Verdict,
}

fn cmd_zeroshot(a: &ZeroshotArgs) -> Result<()> {
    let archive = a.model.load_archive()?;
    let vocab = a.model.load_vocab()?;
    let prompts = PromptPair::encode(&a.prompts.positive, &a.prompts.negative, &vocab, &archive)?;
    let (scenes, _) = scene_embeddings(&archive, &a.scenes, false, None, false)?;
    let mut out = output(a.out.as_deref())?;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for s in &scenes {
        let verdict = classify_zero_shot(&s.embedding, &prompts)?;
        if let Some(l) = s.label {
            preds.push(verdict.label);
            truth.push(l);
        }
        let line = SceneVerdict {
            scene_id: &s.id,
            label: s.label,
            verdict,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    if !preds.is_empty() {
        let m = metrics(&confusion(&preds, &truth)?);
        eprintln!("labeled scenes: {}  tpr {:.3}  tnr {:.3}  f1 {:.3}", preds.len(), m.tpr, m.tnr, m.f1);
    }
    Ok(())
}

fn cmd_train_probe(a: &TrainProbeArgs) -> Result<()> {
    let archive = a.model.load_archive()?;
    let (optical, sar) = scene_embeddings(&archive, &a.scenes, a.with_sar, a.sar_cache.as_deref(), true)?;
    let (data, tag) = match sar {
        None => (labeled_pairs(&optical, Split::Train), a.scenes.modality.tag().to_string()),
        Some(sar) => {
            let mut fused: Vec<FusedScene> = fuse_scenes(&optical, &sar)?
                .into_iter()
                .filter(|f| f.split == Split::Train && f.label.is_some())
                .collect();
            fused.sort_by(|x, y| x.id.cmp(&y.id));
            let data = fused.into_iter().map(|f| (f.features, f.label.expect("filtered"))).collect();
            (data, format!("{}+SAR", a.scenes.modality))
        }
    };
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
        ..TrainConfig::default()
    };
    if !cfg.is_canonical() {
        eprintln!("note: non-canonical budget ({} steps, batch {})", cfg.steps, cfg.batch_size);
    }
    let model = train_probe(&data, &cfg, &tag)?;
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("trained probe on {} {tag} scenes -> {}", data.len(), a.out.display());
    Ok(())
}

fn cmd_train_coop(a: &TrainCoopArgs) -> Result<()> {
    let archive = a.model.load_archive()?;
    let vocab = a.model.load_vocab()?;
    let (optical, _) = scene_embeddings(&archive, &a.scenes, false, None, true)?;
    let data = labeled_pairs(&optical, Split::Train);
    let cfg = CoopConfig {
        m_context: a.m_context,
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        ..CoopConfig::new(a.seed)
    };
    if !cfg.is_canonical() {
        eprintln!("note: non-canonical budget ({} steps, batch {})", cfg.steps, cfg.batch_size);
    }
    let ctx = train_coop(&data, &cfg, &vocab, &archive)?;
    ctx.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("trained {} context rows on {} scenes -> {}", ctx.m, data.len(), a.out.display());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    if a.cloudsen12.is_none() && a.sparcs.is_none() {
        bail!("pass --cloudsen12 and/or --sparcs");
    }
    if a.seeds.is_empty() {
        bail!("--seeds must list at least one seed");
    }
    let archive = a.model.load_archive()?;
    let vocab = a.model.load_vocab()?;
    let thresholds = a.labels.thresholds()?;
    let mut table = EmbeddingTable::new();
    let mut wanted: Vec<(DatasetKind, &Path, Modality)> = Vec::new();
    if let Some(p) = &a.cloudsen12 {
        wanted.push((DatasetKind::Cloudsen12, p, Modality::S2Rgb));
        if a.methods.contains(&Method::Radar) {
            wanted.push((DatasetKind::Cloudsen12, p, Modality::S1SarFc));
        }
    }
    if let Some(p) = &a.sparcs {
        wanted.push((DatasetKind::Sparcs, p, Modality::L8Rgb));
        wanted.push((DatasetKind::Sparcs, p, Modality::L8B6B5B4));
    }
    for (d, p, m) in wanted {
        eprintln!("embedding {} {m}", d.display_name());
        table.insert(d, m, embed_from_manifest(&archive, p, m, thresholds, true)?);
    }
    let config = MatrixConfig {
        methods: a.methods.clone(),
        seeds: a.seeds.clone(),
        thresholds,
        ..MatrixConfig::new(model_id(&archive))
    };
    let reports = run_experiment_matrix(&table, &config, &vocab, &archive);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("matrix.json"), emit_report(&reports, ReportFormat::Json))?;
    let md = emit_report(&reports, ReportFormat::Markdown);
    fs::write(a.out.join("matrix.md"), &md)?;
    print!("{md}");
    Ok(())
}

enum FilterModel {
    Prompts(PromptPair),
    Probe(ProbeModel),
}

fn cmd_filter(a: &FilterArgs) -> Result<()> {
    if !a.threshold.is_finite() {
        bail!("--threshold must be finite");
    }
    let archive = a.model.load_archive()?;
    let model = match (&a.probe, &a.coop) {
        (Some(p), _) => FilterModel::Probe(ProbeModel::load(p).with_context(|| format!("loading probe {}", p.display()))?),
        (None, Some(c)) => {
            let ctx = ContextVectors::load(c).with_context(|| format!("loading context {}", c.display()))?;
            FilterModel::Prompts(coop_prompt_pair(&ctx, &archive)?)
        }
        (None, None) => {
            let vocab = a.model.load_vocab()?;
            FilterModel::Prompts(PromptPair::encode(&a.prompts.positive, &a.prompts.negative, &vocab, &archive)?)
        }
    };
    let fused = matches!(&model, FilterModel::Probe(p) if p.trained_on.ends_with("+SAR"));
    let (optical, sar) = scene_embeddings(&archive, &a.scenes, fused, a.sar_cache.as_deref(), false)?;
    let inputs: Vec<(String, Vec<f32>)> = match sar {
        Some(sar) => fuse_scenes(&optical, &sar)?.into_iter().map(|f| (f.id, f.features)).collect(),
        None => optical.iter().map(|s| (s.id.clone(), s.embedding.values().to_vec())).collect(),
    };
    let mut out = output(a.out.as_deref())?;
    let mut summary = FilterSummary { keep: 0, discard: 0 };
    for (id, x) in &inputs {
        let verdict = match &model {
            FilterModel::Probe(p) => predict_probe(p, x)?,
            FilterModel::Prompts(pp) => classify_zero_shot(&crate::encoder::Embedding::new(x.clone()), pp)?,
        };
        let d = FilterDecision::decide(id, verdict, a.threshold, a.mode);
        match d.action {
            Action::Keep => summary.keep += 1,
            Action::Discard => summary.discard += 1,
        }
        writeln!(out, "{}", serde_json::to_string(&d)?)?;
    }
    writeln!(out, "{}", serde_json::json!({ "summary": summary }))?;
    out.flush()?;
    eprintln!("keep {}  discard {}", summary.keep, summary.discard);
    Ok(())
}
