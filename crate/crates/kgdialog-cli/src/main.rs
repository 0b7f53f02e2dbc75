//! Command line interface for the knowledge-grounded dialog toolkit.
//!
//! Subcommands read and write the corpus file formats, so the pipeline can
//! run end-to-end (`pipeline`) or stage by stage (`detect` → `select` →
//! `generate`) with identical results. Exit codes: 0 success, 2 config
//! error, 3 data error, 4 model error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kgdialog::augment::{generate_detection_samples, group_sources, SourceEntity};
use kgdialog::corpus::{self, Dialog, Label};
use kgdialog::detection::tune_threshold;
use kgdialog::error::{Error, Result};
use kgdialog::eval::detection_metrics;
use kgdialog::models;
use kgdialog::pipeline::{
    self, normalize_dialog, normalize_kb, ChannelTrainOpts, ClassifierTrainOpts, GenModelKind,
    GeneratorTrainOpts, GridStage, PipelineConfig, CHANNEL_FILE, DETECTOR_FILE, DM_FILE, DOC_FILE,
    ENTITY_FILE, ILM_FILE, LM_FILE,
};
use kgdialog::synth::{self, SynthConfig};
use kgdialog::textnorm::{load_abbreviation_table, normalize, NormalizerConfig};

#[derive(Parser)]
#[command(
    name = "kgdialog",
    version,
    about = "Knowledge-grounded dialog toolkit: turn detection, hierarchical knowledge selection, grounded response generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize text, a logs file, or a knowledge base toward spoken style.
    Normalize(NormalizeArgs),
    /// Generate knowledge-seeking detection samples from the knowledge base.
    Augment(AugmentArgs),
    /// Train the knowledge-seeking turn detector.
    TrainDetector(TrainDetectorArgs),
    /// Train the entity and document selection models.
    TrainSelector(TrainSelectorArgs),
    /// Train a generation n-gram model (dm, lm, or ilm).
    TrainGenerator(TrainGeneratorArgs),
    /// Train the channel model.
    TrainChannel(TrainChannelArgs),
    /// Run detection and write a stage file of targets.
    Detect(DetectArgs),
    /// Run selection on a detection stage file.
    Select(SelectArgs),
    /// Decode responses for a selection stage file.
    Generate(GenerateArgs),
    /// Run detect, select, and generate end to end.
    Pipeline(PipelineArgs),
    /// Score a predictions file against references.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic toy corpus for smoke tests and demos.
    SynthData(SynthArgs),
    /// Sweep selection (t, gamma) or generation (lambda1, lambda2) settings.
    Grid(GridArgs),
}

/// Normalizer step toggles shared by the commands that normalize text.
#[derive(Args, Clone)]
struct NormalizerFlags {
    /// Keep the original casing.
    #[arg(long)]
    no_lowercase: bool,
    /// Keep punctuation.
    #[arg(long)]
    no_punctuation: bool,
    /// Keep digits as-is.
    #[arg(long)]
    no_numbers: bool,
    /// Skip abbreviation expansion.
    #[arg(long)]
    no_abbreviations: bool,
    /// Abbreviation table file (lines of `abbrev<TAB>expansion`).
    #[arg(long)]
    abbrev_table: Option<PathBuf>,
}

impl NormalizerFlags {
    fn build(&self) -> Result<NormalizerConfig> {
        let mut cfg = NormalizerConfig::default();
        cfg.lowercase = !self.no_lowercase;
        cfg.strip_punctuation = !self.no_punctuation;
        cfg.expand_numbers = !self.no_numbers;
        cfg.expand_abbreviations = !self.no_abbreviations;
        if let Some(path) = &self.abbrev_table {
            cfg = cfg.with_abbreviations(load_abbreviation_table(path)?)?;
        }
        Ok(cfg)
    }
}

/// Pipeline configuration from a JSON file plus flag overrides. Any config
/// key can also be set by dotted path with `--set key.path=value`.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON pipeline configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Knowledge base path (overrides paths.knowledge).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Dialog logs path (overrides paths.logs).
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Reference labels path (overrides paths.labels).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Models directory (overrides paths.models).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Output path (overrides paths.output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// N-best strategy: single, max, or weighted (detector and selector).
    #[arg(long)]
    strategy: Option<String>,
    /// Detection decision threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Fusion mode: direct, sf, dr, nc-rerank, or nc-online.
    #[arg(long)]
    fusion: Option<String>,
    /// Shallow fusion weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// lm weight.
    #[arg(long)]
    lambda1: Option<f64>,
    /// ilm / channel weight.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Entity candidate-beam threshold.
    #[arg(long)]
    t: Option<f64>,
    /// Entity score exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Ranked documents carried into predictions.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    proposal_k: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Sort final hypotheses by length-normalized score.
    #[arg(long)]
    length_normalize: bool,
    /// Only consider entities of this locality.
    #[arg(long)]
    locality: Option<String>,
    /// Style token: written or spoken.
    #[arg(long)]
    style: Option<String>,
    /// Channel pool policy: domain, entity, or all.
    #[arg(long)]
    pool: Option<String>,
    /// Override any config key by dotted path, e.g. --set detector.threshold=0.6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn apply_set(value: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let leaf: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for segment in &segments[..segments.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("--set path `{path}` crosses a non-object")))?
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    cursor
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("--set path `{path}` crosses a non-object")))?
        .insert(segments[segments.len() - 1].to_string(), leaf);
    Ok(())
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut value: serde_json::Value = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::config(format!("cannot read config {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
            }
            None => serde_json::json!({
                "paths": {"knowledge": "", "logs": "", "models": "", "output": ""}
            }),
        };
        for assignment in &self.set {
            apply_set(&mut value, assignment)?;
        }
        let mut cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| Error::config(e.to_string()))?;

        if let Some(p) = &self.kb {
            cfg.paths.knowledge = p.clone();
        }
        if let Some(p) = &self.logs {
            cfg.paths.logs = p.clone();
        }
        if let Some(p) = &self.labels {
            cfg.paths.labels = Some(p.clone());
        }
        if let Some(p) = &self.models {
            cfg.paths.models = p.clone();
        }
        if let Some(p) = &self.out {
            cfg.paths.output = p.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        if let Some(strategy) = &self.strategy {
            let strategy = strategy.parse()?;
            cfg.detector.strategy = strategy;
            cfg.selection.strategy = strategy;
        }
        if let Some(threshold) = self.threshold {
            cfg.detector.threshold = threshold;
        }
        if let Some(fusion) = &self.fusion {
            cfg.fusion.mode = fusion.parse()?;
        }
        if let Some(lambda) = self.lambda {
            cfg.fusion.lambda = lambda;
        }
        if let Some(lambda1) = self.lambda1 {
            cfg.fusion.lambda1 = lambda1;
        }
        if let Some(lambda2) = self.lambda2 {
            cfg.fusion.lambda2 = lambda2;
        }
        if let Some(t) = self.t {
            cfg.selection.t = t;
        }
        if let Some(gamma) = self.gamma {
            cfg.selection.gamma = gamma;
        }
        if let Some(top_k) = self.top_k {
            cfg.selection.top_k = top_k;
        }
        if let Some(beam_size) = self.beam_size {
            cfg.decoder.beam_size = beam_size;
        }
        if let Some(proposal_k) = self.proposal_k {
            cfg.decoder.proposal_k = proposal_k;
        }
        if let Some(max_len) = self.max_len {
            cfg.decoder.max_len = max_len;
        }
        if self.length_normalize {
            cfg.decoder.length_normalize = true;
        }
        if let Some(locality) = &self.locality {
            cfg.selection.locality = Some(locality.clone());
        }
        if let Some(style) = &self.style {
            cfg.style = Some(style.parse()?);
        }
        if let Some(pool) = &self.pool {
            cfg.pool = pool.parse()?;
        }

        for (flag, path) in [
            ("--kb", &cfg.paths.knowledge),
            ("--logs", &cfg.paths.logs),
            ("--models", &cfg.paths.models),
            ("--out", &cfg.paths.output),
        ] {
            if path.as_os_str().is_empty() {
                return Err(Error::config(format!(
                    "missing {flag} (or a config file setting it)"
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct NormalizeArgs {
    /// Normalize a single string and print it.
    #[arg(long)]
    text: Option<String>,
    /// Normalize every turn (and n-best hypothesis) of a logs file.
    #[arg(long)]
    logs: Option<PathBuf>,
    /// Normalize titles, bodies, and entity names of a knowledge base.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Output path for --logs / --kb.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: NormalizerFlags,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Source dialogs (logs.json format).
    #[arg(long)]
    source_logs: PathBuf,
    /// Sidecar array of {"domain", "entity_name"} aligned with the logs.
    #[arg(long)]
    source_entities: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Augmented dialogs output (logs.json format).
    #[arg(long)]
    out_logs: PathBuf,
    /// Matching positive labels output.
    #[arg(long)]
    out_labels: PathBuf,
    #[command(flatten)]
    flags: NormalizerFlags,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Feature hash dimension.
    #[arg(long, default_value_t = 1 << 18)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainFlags {
    fn opts(&self) -> ClassifierTrainOpts {
        ClassifierTrainOpts {
            dim: self.dim,
            rate: self.rate,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct TrainDataArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    logs: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Models directory (created if missing).
    #[arg(long)]
    models: PathBuf,
    #[command(flatten)]
    norm: NormalizerFlags,
}

type LoadedTrainData = (
    kgdialog::corpus::KnowledgeBase,
    Vec<(Dialog, Label)>,
    NormalizerConfig,
);

impl TrainDataArgs {
    /// Loads and normalizes the knowledge base and labeled dialogs.
    fn load(&self) -> Result<LoadedTrainData> {
        let cfg = self.norm.build()?;
        let kb = normalize_kb(&corpus::load_knowledge_base(&self.kb)?, &cfg);
        let data = corpus::load_dialogs(&self.logs, Some(&self.labels))?
            .into_iter()
            .map(|(dialog, label)| (normalize_dialog(&dialog, &cfg), label.unwrap()))
            .collect();
        std::fs::create_dir_all(&self.models).map_err(|source| Error::Io {
            path: self.models.clone(),
            source,
        })?;
        eprintln!(
            "loaded kb: {} domains, {} entities, {} docs",
            kb.num_domains(),
            kb.num_entities(),
            kb.num_docs()
        );
        Ok((kb, data, cfg))
    }
}

#[derive(Args)]
struct TrainDetectorArgs {
    #[command(flatten)]
    data: TrainDataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Optional augmentation source dialogs.
    #[arg(long, requires = "augment_entities")]
    augment_logs: Option<PathBuf>,
    /// Sidecar for --augment-logs.
    #[arg(long, requires = "augment_logs")]
    augment_entities: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    augment_seed: u64,
}

#[derive(Args)]
struct TrainSelectorArgs {
    #[command(flatten)]
    data: TrainDataArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct TrainGeneratorArgs {
    #[command(flatten)]
    data: TrainDataArgs,
    /// Which model to train: dm, lm, or ilm.
    #[arg(long)]
    which: String,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Style token to condition on: written or spoken.
    #[arg(long)]
    style: Option<String>,
}

#[derive(Args)]
struct TrainChannelArgs {
    #[command(flatten)]
    data: TrainDataArgs,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Disable uniform response truncation during training.
    #[arg(long)]
    no_truncate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Tune the decision threshold on the reference labels and report it.
    #[arg(long, requires = "labels")]
    tune: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Detection stage file.
    #[arg(long)]
    detections: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Selection stage file.
    #[arg(long)]
    selections: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the evaluation report (JSON) here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    references: PathBuf,
    /// Write the report (JSON) here as well.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    dialogs: usize,
    #[arg(long, default_value_t = 3)]
    domains: usize,
    #[arg(long, default_value_t = 4)]
    entities: usize,
    #[arg(long, default_value_t = 5)]
    docs: usize,
    #[arg(long, default_value_t = 0.5)]
    positive_fraction: f64,
    /// Fraction of dialogs held out as the validation split.
    #[arg(long, default_value_t = 0.2)]
    eval_fraction: f64,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Which stage to sweep: selection or generation.
    #[arg(long)]
    stage: String,
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.5,1.0")]
    t_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.5,1.0,2.0")]
    gamma_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.3,1.0")]
    lambda1_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.3,1.0")]
    lambda2_values: Vec<f64>,
    /// Write the grid rows (JSON) here instead of stdout.
    #[arg(long)]
    grid_out: Option<PathBuf>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Normalize(args) => {
            let cfg = args.flags.build()?;
            match (&args.text, &args.logs, &args.kb) {
                (Some(text), None, None) => {
                    println!("{}", normalize(text, &cfg));
                }
                (None, Some(logs), None) => {
                    let out = args.out.ok_or_else(|| Error::config("--logs needs --out"))?;
                    let dialogs: Vec<Dialog> = corpus::load_logs(logs)?
                        .iter()
                        .map(|d| normalize_dialog(d, &cfg))
                        .collect();
                    corpus::write_logs(&dialogs, &out)?;
                    eprintln!("normalized {} dialogs -> {}", dialogs.len(), out.display());
                }
                (None, None, Some(kb_path)) => {
                    let out = args.out.ok_or_else(|| Error::config("--kb needs --out"))?;
                    let kb = normalize_kb(&corpus::load_knowledge_base(kb_path)?, &cfg);
                    kb.save(&out)?;
                    eprintln!(
                        "normalized kb: {} domains, {} entities, {} docs -> {}",
                        kb.num_domains(),
                        kb.num_entities(),
                        kb.num_docs(),
                        out.display()
                    );
                }
                _ => return Err(Error::config("pass exactly one of --text, --logs, or --kb")),
            }
        }
        Command::Augment(args) => {
            let norm = args.flags.build()?;
            let kb = corpus::load_knowledge_base(&args.kb)?;
            let dialogs: Vec<Dialog> = corpus::load_logs(&args.source_logs)?
                .iter()
                .map(|d| normalize_dialog(d, &norm))
                .collect();
            let entities: Vec<SourceEntity> = read_json(&args.source_entities)?;
            let sources = group_sources(dialogs, entities)?;
            let samples = generate_detection_samples(&kb, &sources, &norm, args.seed)?;
            let logs: Vec<Dialog> = samples.iter().map(|s| s.dialog.clone()).collect();
            let labels: Vec<Label> = samples.iter().map(|s| s.label(&kb, &norm)).collect();
            corpus::write_logs(&logs, &args.out_logs)?;
            corpus::write_predictions(&labels, &args.out_labels)?;
            eprintln!(
                "generated {} samples ({} with entity substitution)",
                samples.len(),
                samples.iter().filter(|s| s.substituted).count()
            );
        }
        Command::TrainDetector(args) => {
            let (kb, data, norm) = args.data.load()?;
            let augmented = match (&args.augment_logs, &args.augment_entities) {
                (Some(logs), Some(entities)) => {
                    let dialogs: Vec<Dialog> = corpus::load_logs(logs)?
                        .iter()
                        .map(|d| normalize_dialog(d, &norm))
                        .collect();
                    let entities: Vec<SourceEntity> = read_json(entities)?;
                    let sources = group_sources(dialogs, entities)?;
                    generate_detection_samples(&kb, &sources, &norm, args.augment_seed)?
                }
                _ => Vec::new(),
            };
            let model = pipeline::train_detector(&data, &augmented, &args.train.opts())?;
            let path = args.data.models.join(DETECTOR_FILE);
            models::save_relevance(&model, &path)?;
            eprintln!(
                "trained detector on {} dialogs + {} augmented -> {}",
                data.len(),
                augmented.len(),
                path.display()
            );
        }
        Command::TrainSelector(args) => {
            let (kb, data, _) = args.data.load()?;
            let (entity_model, doc_model) =
                pipeline::train_selector(&kb, &data, &args.train.opts())?;
            let entity_path = args.data.models.join(ENTITY_FILE);
            let doc_path = args.data.models.join(DOC_FILE);
            models::save_relevance(&entity_model, &entity_path)?;
            models::save_relevance(&doc_model, &doc_path)?;
            eprintln!(
                "trained selector on {} dialogs -> {}, {}",
                data.len(),
                entity_path.display(),
                doc_path.display()
            );
        }
        Command::TrainGenerator(args) => {
            let (kb, data, _) = args.data.load()?;
            let kind: GenModelKind = args.which.parse()?;
            let opts = GeneratorTrainOpts {
                kind,
                order: args.order,
                delta: args.delta,
                style: args.style.as_deref().map(str::parse).transpose()?,
            };
            let model = pipeline::train_generator(&kb, &data, &opts)?;
            let file = match kind {
                GenModelKind::Dm => DM_FILE,
                GenModelKind::Lm => LM_FILE,
                GenModelKind::Ilm => ILM_FILE,
            };
            let path = args.data.models.join(file);
            models::save_ngram(&model, &path)?;
            eprintln!(
                "trained {} (order {}) -> {}",
                args.which,
                args.order,
                path.display()
            );
        }
        Command::TrainChannel(args) => {
            let (kb, data, _) = args.data.load()?;
            let opts = ChannelTrainOpts {
                alpha: args.alpha,
                truncate: !args.no_truncate,
                seed: args.seed,
            };
            let model = pipeline::train_channel(&kb, &data, &opts)?;
            let path = args.data.models.join(CHANNEL_FILE);
            models::save_channel(&model, &path)?;
            eprintln!("trained channel model -> {}", path.display());
        }
        Command::Detect(args) => {
            let cfg = args.config.build()?;
            let detections = pipeline::detect_files(&cfg)?;
            eprintln!(
                "detected {} knowledge-seeking of {} dialogs -> {}",
                detections.iter().filter(|&&(_, d)| d).count(),
                detections.len(),
                cfg.paths.output.display()
            );
            if let Some(labels_path) = &cfg.paths.labels {
                let references = corpus::load_labels(labels_path)?;
                if references.len() != detections.len() {
                    return Err(Error::data(format!(
                        "{} labels but {} dialogs",
                        references.len(),
                        detections.len()
                    )));
                }
                let targets: Vec<bool> = references.iter().map(|l| l.target).collect();
                let decisions: Vec<bool> = detections.iter().map(|&(_, d)| d).collect();
                let report = detection_metrics(&decisions, &targets)?;
                eprintln!(
                    "detection: precision {:.4} recall {:.4} f1 {:.4}",
                    report.precision, report.recall, report.f1
                );
                if args.tune {
                    let scores: Vec<f64> = detections.iter().map(|&(s, _)| s).collect();
                    let (threshold, f1) = tune_threshold(&scores, &targets)?;
                    println!("tuned threshold {threshold:.6} (f1 {f1:.4})");
                }
            }
        }
        Command::Select(args) => {
            let cfg = args.config.build()?;
            let labels = pipeline::select_files(&cfg, &args.detections)?;
            eprintln!(
                "selected knowledge for {} dialogs -> {}",
                labels.iter().filter(|l| l.target).count(),
                cfg.paths.output.display()
            );
        }
        Command::Generate(args) => {
            let cfg = args.config.build()?;
            let labels = pipeline::generate_files(&cfg, &args.selections)?;
            eprintln!(
                "generated {} responses -> {}",
                labels.iter().filter(|l| l.target).count(),
                cfg.paths.output.display()
            );
        }
        Command::Pipeline(args) => {
            let cfg = args.config.build()?;
            let (predictions, report) = pipeline::run_pipeline(&cfg)?;
            eprintln!(
                "wrote {} predictions ({} positive) -> {}",
                predictions.len(),
                predictions.iter().filter(|l| l.target).count(),
                cfg.paths.output.display()
            );
            if let Some(report) = report {
                print!("{report}");
                if let Some(path) = &args.report {
                    write_json(path, &report)?;
                }
            }
        }
        Command::Evaluate(args) => {
            let report = pipeline::evaluate_submission_files(&args.predictions, &args.references)?;
            print!("{report}");
            if let Some(path) = &args.report {
                write_json(path, &report)?;
            }
        }
        Command::SynthData(args) => {
            let config = SynthConfig {
                domains: args.domains,
                entities_per_domain: args.entities,
                docs_per_entity: args.docs,
                dialogs: args.dialogs,
                positive_fraction: args.positive_fraction,
                seed: args.seed,
            };
            let data = synth::generate(&config)?;
            std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
                path: args.out.clone(),
                source,
            })?;
            data.kb.save(args.out.join("knowledge.json"))?;
            let (train, eval) = data.split(args.eval_fraction, args.seed);
            for (name, indices) in [("train", &train), ("val", &eval)] {
                let dialogs: Vec<Dialog> =
                    indices.iter().map(|&i| data.dialogs[i].0.clone()).collect();
                let labels: Vec<Label> =
                    indices.iter().map(|&i| data.dialogs[i].1.clone()).collect();
                corpus::write_logs(&dialogs, args.out.join(format!("{name}.logs.json")))?;
                corpus::write_predictions(&labels, args.out.join(format!("{name}.labels.json")))?;
            }
            let sidecar: Vec<SourceEntity> = train
                .iter()
                .map(|&i| SourceEntity {
                    domain: data.sources[i].0.clone(),
                    entity_name: data.sources[i].1.clone(),
                })
                .collect();
            write_json(&args.out.join("train.source_entities.json"), &sidecar)?;
            eprintln!(
                "synthetic corpus: {} domains, {} entities, {} docs; {} train + {} val dialogs -> {}",
                data.kb.num_domains(),
                data.kb.num_entities(),
                data.kb.num_docs(),
                train.len(),
                eval.len(),
                args.out.display()
            );
        }
        Command::Grid(args) => {
            let cfg = args.config.build()?;
            let stage: GridStage = args.stage.parse()?;
            let points = pipeline::grid_search(
                &cfg,
                stage,
                &args.t_values,
                &args.gamma_values,
                &args.lambda1_values,
                &args.lambda2_values,
            )?;
            match &args.grid_out {
                Some(path) => write_json(path, &points)?,
                None => println!("{}", serde_json::to_string_pretty(&points).unwrap()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            let mut source = std::error::Error::source(&error);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
