//! `nativeness` command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nativeness::analysis::{AnalysisResult, Analyzer};
use nativeness::audio::{decode_audio, save_clip};
use nativeness::dataset::{derive_seed, load_clips, LabeledClip};
use nativeness::differ::DiffConfig;
use nativeness::encoder::{Backend, EncoderConfig, LoadedEncoder};
use nativeness::manifest::{filter_split, load_manifest, Label, Split};
use nativeness::metric::{evaluate_metric, train_metric, MetricTrainConfig};
use nativeness::model::{MetricEntry, ModelContainer, ScorerEntry};
use nativeness::scorer::{evaluate, fit_calibration, train, TrainConfig};
use nativeness::synth::{synthesize, write_corpus, Speaker, SynthConfig, SENTENCES};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::api::{router, AppState};
use crate::catalog::{Catalog, CatalogFile, SentenceSpec};
use crate::config::{ServiceConfig, CHECKPOINT_ENV};
use crate::sessions::SessionStore;

#[derive(Debug, Parser)]
#[command(name = "nativeness", version, about = "Pronunciation nativeness scoring: training, evaluation and the practice service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic native / non-native corpus with manifest and sentence catalog.
    SynthCorpus(SynthArgs),
    /// Train the pronunciation scorer.
    TrainScorer(TrainScorerArgs),
    /// Train the 2-D distance embedding.
    TrainMetric(TrainMetricArgs),
    /// Fit the calibration temperature on a manifest's validation split.
    Calibrate(CalibrateArgs),
    /// Report accuracy, focal loss, ECE and triplet satisfaction on one split.
    Evaluate(EvaluateArgs),
    /// Analyze one recording and print the result as JSON.
    AnalyzeFile(AnalyzeFileArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 50)]
    pub validation: usize,
    #[arg(long, default_value_t = 50)]
    pub test: usize,
    #[arg(long, default_value_t = 5)]
    pub clips_per_speaker: usize,
    #[arg(long, default_value_t = 0.6)]
    pub non_native_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    /// TOML file with an encoder configuration.
    #[arg(long)]
    pub encoder_config: Option<PathBuf>,
    /// Pretrained checkpoint directory (config.json + model.safetensors);
    /// selects the pretrained backend.
    #[arg(long)]
    pub encoder_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Transformer hidden-state index (pretrained backend).
    #[arg(long)]
    pub layer: Option<usize>,
}

impl EncoderArgs {
    fn is_set(&self) -> bool {
        self.encoder_config.is_some()
            || self.encoder_checkpoint.is_some()
            || self.feature_dim.is_some()
            || self.chunk_size.is_some()
            || self.layer.is_some()
    }

    fn config(&self) -> Result<EncoderConfig> {
        let mut cfg = match &self.encoder_config {
            Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => EncoderConfig::default(),
        };
        if let Some(dir) = &self.encoder_checkpoint {
            cfg.backend = Backend::PretrainedSsl;
            cfg.checkpoint = Some(dir.clone());
            if self.feature_dim.is_none() {
                cfg.feature_dim = checkpoint_width(dir)?;
            }
        }
        if let Some(d) = self.feature_dim {
            cfg.feature_dim = d;
        }
        if let Some(k) = self.chunk_size {
            cfg.chunk_size = k;
        }
        if self.layer.is_some() {
            cfg.layer = self.layer;
        }
        Ok(cfg)
    }
}

fn checkpoint_width(dir: &Path) -> Result<usize> {
    let path = dir.join("config.json");
    let v: serde_json::Value = serde_json::from_str(&read_text(&path)?)?;
    v.get("hidden_size")
        .and_then(|h| h.as_u64())
        .map(|h| h as usize)
        .with_context(|| format!("{} has no hidden_size", path.display()))
}

#[derive(Debug, Args)]
pub struct TrainCommon {
    /// JSONL manifest with train and validation records.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output model container.
    #[arg(long)]
    pub out: PathBuf,
    /// Existing container to extend; its encoder is reused.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// TOML training configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Train on clean audio only.
    #[arg(long)]
    pub no_augment: bool,
    #[command(flatten)]
    pub encoder: EncoderArgs,
}

#[derive(Debug, Args)]
pub struct TrainScorerArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainMetricArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub triplets_per_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, env = CHECKPOINT_ENV)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to updating the checkpoint in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = CHECKPOINT_ENV)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, validation or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 1000)]
    pub triplets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AnalyzeFileArgs {
    /// WAV or FLAC recording.
    pub file: PathBuf,
    #[arg(long, env = CHECKPOINT_ENV)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "adhoc")]
    pub sentence_id: String,
    /// Service config whose `[diff]` table sets the segment thresholds.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config file and NATIVENESS_CHECKPOINT.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub session_db: Option<PathBuf>,
    #[arg(long)]
    pub sentences: Option<PathBuf>,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthCorpus(a) => synth_corpus(a),
        Command::TrainScorer(a) => train_scorer(a),
        Command::TrainMetric(a) => train_metric_cmd(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::AnalyzeFile(a) => analyze_file(a),
        Command::Serve(a) => serve(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "train" => Split::Train,
        "validation" => Split::Validation,
        "test" => Split::Test,
        other => bail!("unknown split {other:?} (train, validation, test)"),
    })
}

fn load_split(manifest: &Path, split: Split) -> Result<Vec<LabeledClip>> {
    let records = load_manifest(manifest)?;
    let chosen = filter_split(&records, split);
    if chosen.is_empty() {
        bail!("{} has no {} records", manifest.display(), split.as_str());
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    Ok(load_clips(&chosen, base)?)
}

fn load_container(path: &Path) -> Result<ModelContainer> {
    ModelContainer::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// The base container and its encoder, or a fresh container.
fn start_container(common: &TrainCommon) -> Result<(ModelContainer, LoadedEncoder)> {
    match &common.base {
        Some(p) => {
            if common.encoder.is_set() {
                bail!("--base fixes the encoder; drop the encoder flags");
            }
            let c = load_container(p)?;
            let enc = LoadedEncoder::load(&c.encoder)?;
            c.check_encoder(&enc)?;
            Ok((c, enc))
        }
        None => {
            let enc = LoadedEncoder::load(&common.encoder.config()?)?;
            Ok((ModelContainer::new(&enc), enc))
        }
    }
}

fn synth_corpus(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        train: a.train,
        validation: a.validation,
        test: a.test,
        clips_per_speaker: a.clips_per_speaker,
        non_native_fraction: a.non_native_fraction,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let records = write_corpus(&a.out, &cfg)?;
    // one native exemplar per sentence for playback
    let exemplar = Speaker {
        id: "exemplar".into(),
        label: Label::Native,
        f0: 120.0,
    };
    std::fs::create_dir_all(a.out.join("model_audio"))?;
    let mut sentences = Vec::new();
    for (i, text) in SENTENCES.iter().enumerate() {
        let id = format!("s{}", i + 1);
        let rel = PathBuf::from(format!("model_audio/{id}.wav"));
        let utt = synthesize(&exemplar, &cfg, derive_seed(a.seed, &[0xE8, i as u64]));
        save_clip(a.out.join(&rel), &utt.clip)?;
        sentences.push(SentenceSpec {
            sentence_id: id,
            text: (*text).to_string(),
            model_audio: Some(rel),
        });
    }
    std::fs::write(
        a.out.join("sentences.json"),
        serde_json::to_string_pretty(&CatalogFile { sentences })?,
    )?;
    eprintln!("wrote {} clips to {}", records.len(), a.out.display());
    Ok(())
}

fn apply_common_scorer(cfg: &mut TrainConfig, c: &TrainCommon) {
    if let Some(v) = c.seed {
        cfg.rng_seed = v;
    }
    if let Some(v) = c.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = c.patience {
        cfg.early_stop_patience = v;
    }
    if let Some(v) = c.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = c.batch_size {
        cfg.batch_size = v;
    }
    if c.no_augment {
        cfg.augmentation = None;
    }
}

fn train_scorer(a: TrainScorerArgs) -> Result<()> {
    let c = &a.common;
    let mut cfg: TrainConfig = match &c.config {
        Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    apply_common_scorer(&mut cfg, c);
    if let Some(g) = a.focal_gamma {
        cfg.focal_gamma = g;
    }
    cfg.validate()?;
    let (mut container, enc) = start_container(c)?;
    let tr = load_split(&c.manifest, Split::Train)?;
    let va = load_split(&c.manifest, Split::Validation)?;
    tracing::info!(train = tr.len(), validation = va.len(), "training scorer");
    let (model, log) = train(&tr, &va, &enc, &cfg)?;
    for e in &log.epochs {
        tracing::info!(
            epoch = e.epoch,
            train_loss = e.train_loss,
            val_loss = e.val_loss,
            val_accuracy = e.val_accuracy,
            "epoch"
        );
    }
    container.set_scorer(ScorerEntry {
        model,
        config: cfg,
        log: log.clone(),
    });
    container.save(&c.out)?;
    print_json(&log)
}

fn train_metric_cmd(a: TrainMetricArgs) -> Result<()> {
    let c = &a.common;
    let mut cfg: MetricTrainConfig = match &c.config {
        Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => MetricTrainConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.rng_seed = v;
    }
    if let Some(v) = c.epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = c.patience {
        cfg.early_stop_patience = v;
    }
    if let Some(v) = c.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = c.batch_size {
        cfg.batch_size = v;
    }
    if c.no_augment {
        cfg.augmentation = None;
    }
    if let Some(m) = a.margin {
        cfg.margin = m;
    }
    if let Some(t) = a.triplets_per_epoch {
        cfg.triplets_per_epoch = t;
    }
    cfg.validate()?;
    let (mut container, enc) = start_container(c)?;
    let tr = load_split(&c.manifest, Split::Train)?;
    let va = load_split(&c.manifest, Split::Validation)?;
    tracing::info!(train = tr.len(), validation = va.len(), "training metric");
    let (model, log) = train_metric(&tr, &va, &enc, &cfg)?;
    for w in &log.warnings {
        tracing::warn!("{w}");
    }
    for e in &log.epochs {
        tracing::info!(
            epoch = e.epoch,
            train_loss = e.train_loss,
            val_loss = e.val_loss,
            val_satisfaction = e.val_satisfaction,
            "epoch"
        );
    }
    container.metric = Some(MetricEntry {
        model,
        config: cfg,
        log: log.clone(),
    });
    container.save(&c.out)?;
    print_json(&log)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let mut container = load_container(&a.checkpoint)?;
    let enc = LoadedEncoder::load(&container.encoder)?;
    container.check_encoder(&enc)?;
    let va = load_split(&a.manifest, Split::Validation)?;
    let cal = fit_calibration(container.scorer()?, &va, &enc)?;
    if cal.degenerate {
        tracing::warn!("validation logits all share one margin; temperature left at 1");
    }
    container.calibration = cal.clone();
    container.save(a.out.as_ref().unwrap_or(&a.checkpoint))?;
    print_json(&cal)
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    split: String,
    samples: usize,
    accuracy: f64,
    focal_loss: f64,
    ece: f64,
    temperature: f64,
    triplet_satisfaction: Option<f64>,
    mean_intra_non_native: Option<f64>,
    mean_cross_class: Option<f64>,
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let split = parse_split(&a.split)?;
    let container = load_container(&a.checkpoint)?;
    let enc = LoadedEncoder::load(&container.encoder)?;
    container.check_encoder(&enc)?;
    let clips = load_split(&a.manifest, split)?;
    let gamma = container.scorer.as_ref().map(|s| s.config.focal_gamma).unwrap_or(2.0);
    let t = container.calibration.temperature;
    let s = evaluate(container.scorer()?, &clips, &enc, gamma, t)?;
    let m = match &container.metric {
        Some(entry) => Some(evaluate_metric(&entry.model, &clips, &enc, a.triplets, a.seed)?),
        None => None,
    };
    print_json(&EvaluationReport {
        split: a.split,
        samples: s.samples,
        accuracy: s.accuracy,
        focal_loss: s.focal_loss,
        ece: s.ece,
        temperature: t,
        triplet_satisfaction: m.as_ref().map(|m| m.satisfaction),
        mean_intra_non_native: m.as_ref().map(|m| m.mean_intra_non_native),
        mean_cross_class: m.as_ref().map(|m| m.mean_cross_class),
    })
}

fn analyze_file(a: AnalyzeFileArgs) -> Result<()> {
    let diff = match &a.config {
        Some(p) => ServiceConfig::load(p)?.diff,
        None => DiffConfig::default(),
    };
    let container = load_container(&a.checkpoint)?;
    let analyzer = Analyzer::from_container(container, diff)?;
    let bytes = std::fs::read(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let clip = decode_audio(&bytes).with_context(|| format!("decoding {}", a.file.display()))?;
    let analysis = analyzer.analyze(&clip)?;
    // content-derived id and no timestamp, so reruns print the same bytes
    let digest = hex::encode(Sha256::digest(&bytes));
    let result = AnalysisResult::new(analysis, format!("file-{}", &digest[..16]), a.sentence_id, None);
    print_json(&result)
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(h) = a.host {
        cfg.host = h;
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(p) = a.session_db {
        cfg.session_db = p;
    }
    if a.sentences.is_some() {
        cfg.sentences = a.sentences;
    }
    if a.static_dir.is_some() {
        cfg.static_dir = a.static_dir;
    }
    let analyzer = match cfg.resolve_checkpoint(a.checkpoint) {
        Some(p) => {
            let container = load_container(&p)?;
            Some(Arc::new(Analyzer::from_container(container, cfg.diff.clone())?))
        }
        None => {
            tracing::warn!("no checkpoint configured; analysis requests will return 503");
            None
        }
    };
    let catalog = match &cfg.sentences {
        Some(p) => Catalog::load(p)?,
        None => Catalog::builtin(),
    };
    let store = SessionStore::open(&cfg.session_db)
        .with_context(|| format!("opening session store {}", cfg.session_db.display()))?;
    let state = AppState {
        analyzer,
        store: Arc::new(store),
        catalog: Arc::new(catalog),
    };
    let app = router(state, cfg.max_upload_bytes, cfg.static_dir.as_deref());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = format!("{}:{}", cfg.host, cfg.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
