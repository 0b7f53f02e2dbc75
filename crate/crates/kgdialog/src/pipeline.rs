//! End-to-end orchestration: configuration, text normalization of corpora,
//! the seeded detect → select → generate pipeline, stage-by-stage file
//! composition, training entry points for the reference models, evaluation
//! against references, and a small grid runner.
//!
//! Dialogs are processed in parallel (worker count from the config); output
//! order always equals input order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentedSample;
use crate::corpus::{self, Dialog, DocumentKey, KnowledgeBase, Label};
use crate::decoding::{
    decode_response, DecoderConfig, FusionConfig, FusionMode, GenerationScorers,
};
use crate::detection::{detect_turn, DetectorConfig};
use crate::error::{Error, Result};
use crate::eval::{
    bleu1, detection_metrics, rouge_l, selection_metrics, DetectionReport, GenerationReport,
    SelectionReport,
};
use crate::models::{
    self, featurize, train_relevance, ChannelModel, ConditioningContext, NGramLM,
    RelevanceClassifier, SequenceScorer, Style, TrainConfig, Vocabulary, EOS,
};
use crate::selection::{document_tokens, rank_documents, ScoredSelection, SelectionConfig};
use crate::textnorm::{normalize, tokenize, NormalizerConfig};

/// Which documents the channel model normalizes over during decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolPolicy {
    /// All documents sharing the selected document's domain.
    #[default]
    Domain,
    /// All documents of the selected document's entity.
    Entity,
    /// Every document in the knowledge base.
    All,
}

impl std::str::FromStr for PoolPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domain" => Ok(PoolPolicy::Domain),
            "entity" => Ok(PoolPolicy::Entity),
            "all" => Ok(PoolPolicy::All),
            other => Err(Error::config(format!("unknown pool policy `{other}`"))),
        }
    }
}

/// Builds the channel candidate pool for a selected document.
pub fn channel_pool(kb: &KnowledgeBase, key: &DocumentKey, policy: PoolPolicy) -> Vec<DocumentKey> {
    match policy {
        PoolPolicy::Domain => kb.domain_pool(&key.domain),
        PoolPolicy::Entity => kb
            .entity(&key.domain, &key.entity_id)
            .map(|entity| {
                entity
                    .docs
                    .keys()
                    .map(|doc_id| DocumentKey::new(&key.domain, &key.entity_id, doc_id))
                    .collect()
            })
            .unwrap_or_default(),
        PoolPolicy::All => kb.iter_docs().map(|(key, _)| key).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub knowledge: PathBuf,
    pub logs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub models: PathBuf,
    pub output: PathBuf,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub normalizer: NormalizerConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    /// Style token prepended to the generation context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
    #[serde(default)]
    pub pool: PoolPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.selection.validate()?;
        self.decoder.validate()?;
        self.fusion.validate()?;
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        Ok(())
    }

    fn model_path(&self, name: &str) -> PathBuf {
        self.paths.models.join(name)
    }
}

/// Fixed model file names inside the models directory.
pub const DETECTOR_FILE: &str = "detector.json";
pub const ENTITY_FILE: &str = "entity.json";
pub const DOC_FILE: &str = "doc.json";
pub const DM_FILE: &str = "dm.json";
pub const LM_FILE: &str = "lm.json";
pub const ILM_FILE: &str = "ilm.json";
pub const CHANNEL_FILE: &str = "channel.json";

/// Returns a copy of the dialog with every turn text (and n-best hypothesis
/// text) normalized.
pub fn normalize_dialog(dialog: &Dialog, cfg: &NormalizerConfig) -> Dialog {
    let turns = dialog
        .turns
        .iter()
        .map(|turn| {
            let mut out = turn.clone();
            out.text = normalize(&turn.text, cfg);
            if let Some(nbest) = &mut out.nbest {
                for hypothesis in nbest {
                    hypothesis.text = normalize(&hypothesis.text, cfg);
                }
            }
            out
        })
        .collect();
    Dialog::new(turns)
}

/// Returns a copy of the knowledge base with document titles/bodies, entity
/// names, and localities normalized.
pub fn normalize_kb(kb: &KnowledgeBase, cfg: &NormalizerConfig) -> KnowledgeBase {
    let mut out = KnowledgeBase::default();
    for (domain, entities) in &kb.domains {
        let mut normalized = BTreeMap::new();
        for (id, entity) in entities {
            let mut entity = entity.clone();
            entity.name = entity.name.map(|n| normalize(&n, cfg));
            entity.locality = entity.locality.map(|l| normalize(&l, cfg));
            for doc in entity.docs.values_mut() {
                doc.title = normalize(&doc.title, cfg);
                doc.body = normalize(&doc.body, cfg);
            }
            normalized.insert(id.clone(), entity);
        }
        out.domains.insert(domain.clone(), normalized);
    }
    out
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Detection over a batch of (already normalized) dialogs.
pub fn detect_stage(
    classifier: &RelevanceClassifier,
    dialogs: &[Dialog],
    config: &DetectorConfig,
    workers: usize,
) -> Result<Vec<(f64, bool)>> {
    with_pool(workers, || {
        dialogs
            .par_iter()
            .enumerate()
            .map(|(i, dialog)| detect_turn(classifier, dialog, config).map_err(|e| e.at_dialog(i)))
            .collect()
    })?
}

/// Selection over the dialogs flagged positive, yielding the ranked document
/// list for each (None where the detector said negative).
#[allow(clippy::too_many_arguments)]
pub fn select_stage(
    entity_model: &RelevanceClassifier,
    doc_model: &RelevanceClassifier,
    dialogs: &[Dialog],
    positive: &[bool],
    kb: &KnowledgeBase,
    config: &SelectionConfig,
    workers: usize,
) -> Result<Vec<Option<Vec<ScoredSelection>>>> {
    with_pool(workers, || {
        dialogs
            .par_iter()
            .zip(positive.par_iter())
            .enumerate()
            .map(|(i, (dialog, &is_positive))| {
                if !is_positive {
                    return Ok(None);
                }
                rank_documents(entity_model, doc_model, dialog, kb, config)
                    .map(Some)
                    .map_err(|e| e.at_dialog(i))
            })
            .collect()
    })?
}

/// The trained generation models a decode run needs.
pub struct GenerationModels {
    pub dm: NGramLM,
    pub lm: Option<NGramLM>,
    pub ilm: Option<NGramLM>,
    pub channel: Option<ChannelModel>,
}

impl GenerationModels {
    /// Loads the models the fusion mode requires from the models directory.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let mode = cfg.fusion.mode;
        let need_lm = mode != FusionMode::Direct;
        let need_ilm = mode == FusionMode::DensityRatio;
        let need_channel = matches!(mode, FusionMode::NcRerank | FusionMode::NcOnline);
        Ok(GenerationModels {
            dm: models::load_ngram(cfg.model_path(DM_FILE))?,
            lm: need_lm
                .then(|| models::load_ngram(cfg.model_path(LM_FILE)))
                .transpose()?,
            ilm: need_ilm
                .then(|| models::load_ngram(cfg.model_path(ILM_FILE)))
                .transpose()?,
            channel: need_channel
                .then(|| models::load_channel(cfg.model_path(CHANNEL_FILE)))
                .transpose()?,
        })
    }

    fn scorers(&self) -> GenerationScorers<'_> {
        GenerationScorers {
            dm: Some(&self.dm),
            lm: self.lm.as_deref_scorer(),
            ilm: self.ilm.as_deref_scorer(),
            channel: self
                .channel
                .as_ref()
                .map(|c| c as &dyn models::ChannelScorer),
        }
    }
}

trait AsDerefScorer {
    fn as_deref_scorer(&self) -> Option<&dyn models::SequenceScorer>;
}

impl AsDerefScorer for Option<NGramLM> {
    fn as_deref_scorer(&self) -> Option<&dyn models::SequenceScorer> {
        self.as_ref().map(|m| m as &dyn models::SequenceScorer)
    }
}

/// Builds the generation context for one dialog: normalized dialog turns,
/// the selected document's tokens, and the configured style token.
pub fn generation_context(
    dialog: &Dialog,
    kb: &KnowledgeBase,
    key: &DocumentKey,
    style: Option<Style>,
) -> Result<ConditioningContext> {
    let doc = kb
        .resolve(key)
        .ok_or_else(|| Error::data(format!("selected document {key} not in knowledge base")))?;
    let mut ctx = ConditioningContext::from_dialog(dialog)?.with_document(document_tokens(doc));
    if let Some(style) = style {
        ctx = ctx.with_style(style);
    }
    Ok(ctx)
}

/// Decodes a response for each dialog with a selected document (None where
/// the selection is None).
#[allow(clippy::too_many_arguments)]
pub fn generate_stage(
    models: &GenerationModels,
    dialogs: &[Dialog],
    selected: &[Option<DocumentKey>],
    kb: &KnowledgeBase,
    cfg: &PipelineConfig,
) -> Result<Vec<Option<String>>> {
    with_pool(cfg.workers, || {
        dialogs
            .par_iter()
            .zip(selected.par_iter())
            .enumerate()
            .map(|(i, (dialog, selection))| {
                let Some(key) = selection else {
                    return Ok(None);
                };
                let run = || -> Result<String> {
                    let ctx = generation_context(dialog, kb, key, cfg.style)?;
                    let pool = channel_pool(kb, key, cfg.pool);
                    let hypotheses = decode_response(
                        models.scorers(),
                        &ctx,
                        Some(key),
                        &pool,
                        &cfg.decoder,
                        &cfg.fusion,
                    )?;
                    Ok(models.dm.vocab().render(&hypotheses[0].tokens))
                };
                run().map(Some).map_err(|e| e.at_dialog(i))
            })
            .collect()
    })?
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a stage file in the labels schema without the positive-entry
/// completeness check (intermediate stage outputs are partial).
pub fn read_stage_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    read_json_file(path.as_ref())
}

/// Writes a partial (stage) labels file.
pub fn write_stage_labels(labels: &[Label], path: impl AsRef<Path>) -> Result<()> {
    write_json_file(path.as_ref(), &labels)
}

struct LoadedInputs {
    kb: KnowledgeBase,
    dialogs: Vec<Dialog>,
    references: Option<Vec<Label>>,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<LoadedInputs> {
    let kb_raw = corpus::load_knowledge_base(&cfg.paths.knowledge)?;
    let pairs = corpus::load_dialogs(&cfg.paths.logs, cfg.paths.labels.as_deref())?;
    let references = cfg
        .paths
        .labels
        .is_some()
        .then(|| pairs.iter().map(|(_, l)| l.clone().unwrap()).collect());
    let dialogs = pairs
        .into_iter()
        .map(|(dialog, _)| normalize_dialog(&dialog, &cfg.normalizer))
        .collect();
    Ok(LoadedInputs {
        kb: normalize_kb(&kb_raw, &cfg.normalizer),
        dialogs,
        references,
    })
}

/// Runs detection only and writes `[{"target": bool}, ...]` to the output
/// path. Returns the per-dialog scores and decisions.
pub fn detect_files(cfg: &PipelineConfig) -> Result<Vec<(f64, bool)>> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let detector = models::load_relevance(cfg.model_path(DETECTOR_FILE))?;
    let detections = detect_stage(&detector, &inputs.dialogs, &cfg.detector, cfg.workers)?;
    let labels: Vec<Label> = detections
        .iter()
        .map(|&(_, decision)| Label {
            target: decision,
            knowledge: None,
            response: None,
        })
        .collect();
    write_stage_labels(&labels, &cfg.paths.output)?;
    Ok(detections)
}

/// Runs selection on the dialogs a detection stage file flagged positive and
/// writes the stage file extended with ranked knowledge keys.
pub fn select_files(cfg: &PipelineConfig, detections_path: &Path) -> Result<Vec<Label>> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let detections = read_stage_labels(detections_path)?;
    if detections.len() != inputs.dialogs.len() {
        return Err(Error::data(format!(
            "{} detection entries but {} dialogs",
            detections.len(),
            inputs.dialogs.len()
        )));
    }
    let positive: Vec<bool> = detections.iter().map(|l| l.target).collect();
    let entity_model = models::load_relevance(cfg.model_path(ENTITY_FILE))?;
    let doc_model = models::load_relevance(cfg.model_path(DOC_FILE))?;
    let ranked = select_stage(
        &entity_model,
        &doc_model,
        &inputs.dialogs,
        &positive,
        &inputs.kb,
        &cfg.selection,
        cfg.workers,
    )?;
    let labels: Vec<Label> = ranked
        .iter()
        .map(|selection| match selection {
            None => Label::negative(),
            Some(ranked) => Label {
                target: true,
                knowledge: Some(
                    ranked
                        .iter()
                        .take(cfg.selection.top_k)
                        .map(|s| s.key.clone())
                        .collect(),
                ),
                response: None,
            },
        })
        .collect();
    write_stage_labels(&labels, &cfg.paths.output)?;
    Ok(labels)
}

/// Decodes responses for the dialogs a selection stage file equipped with
/// knowledge and writes the completed predictions file.
pub fn generate_files(cfg: &PipelineConfig, selections_path: &Path) -> Result<Vec<Label>> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let selections = read_stage_labels(selections_path)?;
    if selections.len() != inputs.dialogs.len() {
        return Err(Error::data(format!(
            "{} selection entries but {} dialogs",
            selections.len(),
            inputs.dialogs.len()
        )));
    }
    let selected: Vec<Option<DocumentKey>> = selections
        .iter()
        .enumerate()
        .map(|(i, label)| {
            if !label.target {
                return Ok(None);
            }
            label
                .reference_key()
                .cloned()
                .map(Some)
                .ok_or_else(|| Error::data(format!("dialog {i}: positive entry without knowledge")))
        })
        .collect::<Result<_>>()?;
    let generation = GenerationModels::load(cfg)?;
    let responses = generate_stage(&generation, &inputs.dialogs, &selected, &inputs.kb, cfg)?;
    let labels: Vec<Label> = selections
        .iter()
        .zip(&responses)
        .map(|(label, response)| match response {
            None => Label::negative(),
            Some(response) => Label {
                target: true,
                knowledge: label.knowledge.clone(),
                response: Some(response.clone()),
            },
        })
        .collect();
    corpus::write_predictions(&labels, &cfg.paths.output)?;
    Ok(labels)
}

/// The full pipeline: detect every dialog; select and generate for the turns
/// the detector flags (selection and generation run on the detector's
/// outputs). Writes the predictions file and, when reference labels were
/// configured, returns the evaluation report too.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(Vec<Label>, Option<EvalReport>)> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;

    let detector = models::load_relevance(cfg.model_path(DETECTOR_FILE))?;
    let detections = detect_stage(&detector, &inputs.dialogs, &cfg.detector, cfg.workers)?;
    let positive: Vec<bool> = detections.iter().map(|&(_, d)| d).collect();

    let entity_model = models::load_relevance(cfg.model_path(ENTITY_FILE))?;
    let doc_model = models::load_relevance(cfg.model_path(DOC_FILE))?;
    let ranked = select_stage(
        &entity_model,
        &doc_model,
        &inputs.dialogs,
        &positive,
        &inputs.kb,
        &cfg.selection,
        cfg.workers,
    )?;
    let selected: Vec<Option<DocumentKey>> = ranked
        .iter()
        .map(|r| r.as_ref().map(|ranked| ranked[0].key.clone()))
        .collect();

    let generation = GenerationModels::load(cfg)?;
    let responses = generate_stage(&generation, &inputs.dialogs, &selected, &inputs.kb, cfg)?;

    let predictions: Vec<Label> = ranked
        .iter()
        .zip(&responses)
        .map(|(selection, response)| match (selection, response) {
            (Some(ranked), Some(response)) => Label {
                target: true,
                knowledge: Some(
                    ranked
                        .iter()
                        .take(cfg.selection.top_k)
                        .map(|s| s.key.clone())
                        .collect(),
                ),
                response: Some(response.clone()),
            },
            _ => Label::negative(),
        })
        .collect();
    corpus::write_predictions(&predictions, &cfg.paths.output)?;

    let report = match &inputs.references {
        None => None,
        Some(references) => Some(evaluate_submission(&predictions, references, &[1, 5])?),
    };
    Ok((predictions, report))
}

/// Combined evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detection: DetectionReport,
    /// None when no turn is positive in both prediction and reference.
    pub selection: Option<SelectionReport>,
    pub generation: Option<GenerationReport>,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "detection   precision {:.4}  recall {:.4}  f1 {:.4}",
            self.detection.precision, self.detection.recall, self.detection.f1
        )?;
        match &self.selection {
            Some(s) => {
                write!(f, "selection   instances {:<6}", s.instances)?;
                for (k, r) in &s.recall_at {
                    write!(f, " R@{k} {r:.4} ")?;
                }
                writeln!(f)?;
            }
            None => writeln!(f, "selection   (no jointly positive turns)")?,
        }
        match &self.generation {
            Some(g) => writeln!(
                f,
                "generation  instances {:<6} BLEU-1 {:.4}  ROUGE-L {:.4}",
                g.instances, g.bleu1, g.rouge_l
            ),
            None => writeln!(f, "generation  (no jointly positive turns)"),
        }
    }
}

/// Scores predictions against references: detection over all turns;
/// selection Recall@k and generation BLEU-1/ROUGE-L over the turns where
/// both sides are positive (target mismatches count against detection only).
pub fn evaluate_submission(
    predictions: &[Label],
    references: &[Label],
    ks: &[usize],
) -> Result<EvalReport> {
    if predictions.len() != references.len() {
        return Err(Error::data(format!(
            "{} predictions but {} references",
            predictions.len(),
            references.len()
        )));
    }
    let pred_targets: Vec<bool> = predictions.iter().map(|l| l.target).collect();
    let ref_targets: Vec<bool> = references.iter().map(|l| l.target).collect();
    let detection = detection_metrics(&pred_targets, &ref_targets)?;

    let mut rankings = Vec::new();
    let mut ref_keys = Vec::new();
    let mut candidates = Vec::new();
    let mut ref_responses = Vec::new();
    for (prediction, reference) in predictions.iter().zip(references) {
        if !(prediction.target && reference.target) {
            continue;
        }
        let ranking = prediction
            .knowledge
            .clone()
            .ok_or_else(|| Error::data("positive prediction without knowledge"))?;
        let key = reference
            .reference_key()
            .ok_or_else(|| Error::data("positive reference without knowledge"))?
            .clone();
        rankings.push(ranking);
        ref_keys.push(key);
        candidates.push(tokenize(prediction.response.as_deref().unwrap_or("")));
        ref_responses.push(tokenize(reference.response.as_deref().unwrap_or("")));
    }

    let (selection, generation) = if rankings.is_empty() {
        (None, None)
    } else {
        let selection = selection_metrics(&rankings, &ref_keys, ks)?;
        let mut bleu_total = 0.0;
        let mut rouge_total = 0.0;
        for (candidate, reference) in candidates.iter().zip(&ref_responses) {
            bleu_total += bleu1(candidate, std::slice::from_ref(reference))?;
            rouge_total += rouge_l(candidate, reference, 1.2);
        }
        let n = candidates.len() as f64;
        (
            Some(selection),
            Some(GenerationReport {
                instances: candidates.len(),
                bleu1: bleu_total / n,
                rouge_l: rouge_total / n,
            }),
        )
    };
    Ok(EvalReport {
        detection,
        selection,
        generation,
    })
}

/// File-level wrapper around [`evaluate_submission`].
pub fn evaluate_submission_files(
    predictions: impl AsRef<Path>,
    references: impl AsRef<Path>,
) -> Result<EvalReport> {
    let predictions = corpus::load_labels(predictions)?;
    let references = corpus::load_labels(references)?;
    evaluate_submission(&predictions, &references, &[1, 5])
}

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainOpts {
    pub dim: usize,
    pub rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainOpts {
    fn default() -> Self {
        let base = TrainConfig::default();
        ClassifierTrainOpts {
            dim: base.dim,
            rate: base.rate,
            epochs: base.epochs,
            seed: base.seed,
        }
    }
}

impl ClassifierTrainOpts {
    fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            rate: self.rate,
            epochs: self.epochs,
            seed: self.seed,
            dim: self.dim,
        }
    }
}

/// Trains the knowledge-seeking turn detector on labeled dialogs (already
/// normalized) plus optional augmented samples.
pub fn train_detector(
    data: &[(Dialog, Label)],
    augmented: &[AugmentedSample],
    opts: &ClassifierTrainOpts,
) -> Result<RelevanceClassifier> {
    let mut samples = Vec::with_capacity(data.len() + augmented.len());
    for (dialog, label) in data {
        let ctx = ConditioningContext::from_dialog(dialog)?;
        samples.push((featurize(&ctx, &[], opts.dim), label.target));
    }
    for sample in augmented {
        let ctx = ConditioningContext::from_dialog(&sample.dialog)?;
        samples.push((featurize(&ctx, &[], opts.dim), true));
    }
    train_relevance(&samples, opts.to_train_config())
}

/// Trains the entity and document selection classifiers, resampling the
/// negatives every epoch with a fresh seed.
pub fn train_selector(
    kb: &KnowledgeBase,
    data: &[(Dialog, Label)],
    opts: &ClassifierTrainOpts,
) -> Result<(RelevanceClassifier, RelevanceClassifier)> {
    if !data.iter().any(|(_, label)| label.target) {
        return Err(Error::data("selector training needs positive dialogs"));
    }
    let config = opts.to_train_config();
    let mut entity_model = RelevanceClassifier::new(config.clone());
    let mut doc_model = RelevanceClassifier::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for epoch in 0..opts.epochs {
        let (entity_samples, doc_samples) =
            crate::selection::build_selection_training_set(kb, data, opts.seed + epoch as u64)?;
        let featurized = |samples: &[crate::selection::SelectionSample]| -> Result<Vec<_>> {
            samples
                .iter()
                .map(|s| {
                    let ctx = ConditioningContext::from_dialog(&s.dialog)?;
                    Ok((featurize(&ctx, &s.extra, opts.dim), s.label))
                })
                .collect()
        };
        entity_model.sgd_epoch(&featurized(&entity_samples)?, opts.rate, &mut rng);
        doc_model.sgd_epoch(&featurized(&doc_samples)?, opts.rate, &mut rng);
    }
    Ok((entity_model, doc_model))
}

/// Which generation model to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenModelKind {
    /// Grounded direct model p(w | context, document).
    Dm,
    /// Ungrounded response model p(w | context).
    Lm,
    /// Ungrounded model for the density-ratio subtraction; differs from the
    /// lm only by its training corpus.
    Ilm,
}

impl std::str::FromStr for GenModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dm" => Ok(GenModelKind::Dm),
            "lm" => Ok(GenModelKind::Lm),
            "ilm" => Ok(GenModelKind::Ilm),
            other => Err(Error::config(format!("unknown generation model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainOpts {
    pub kind: GenModelKind,
    pub order: usize,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
}

impl Default for GeneratorTrainOpts {
    fn default() -> Self {
        GeneratorTrainOpts {
            kind: GenModelKind::Dm,
            order: 3,
            delta: 0.5,
            style: None,
        }
    }
}

/// A shared vocabulary over everything the generation models can see:
/// dialog turns, knowledge-base text, and reference responses.
pub fn build_vocabulary(kb: &KnowledgeBase, data: &[(Dialog, Label)]) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for (dialog, label) in data {
        for turn in &dialog.turns {
            for token in tokenize(&turn.text) {
                vocab.add(&token);
            }
        }
        if let Some(response) = &label.response {
            for token in tokenize(response) {
                vocab.add(&token);
            }
        }
    }
    for (domain, _, entity) in kb.iter_entities() {
        for token in tokenize(domain) {
            vocab.add(&token);
        }
        if let Some(name) = &entity.name {
            for token in tokenize(name) {
                vocab.add(&token);
            }
        }
        for doc in entity.docs.values() {
            for token in document_tokens(doc) {
                vocab.add(&token);
            }
        }
    }
    vocab
}

/// Builds one training sequence: conditioning context, `<bos>`, the response,
/// `<eos>`.
fn training_sequence(
    ctx: &ConditioningContext,
    response: &str,
    vocab: &Vocabulary,
) -> Vec<models::TokenId> {
    let mut seq = ctx.encode(vocab);
    seq.push(models::BOS);
    seq.extend(tokenize(response).iter().map(|w| vocab.id_or_unk(w)));
    seq.push(EOS);
    seq
}

/// Trains one generation n-gram model on the positive dialogs: the dm sees
/// the grounding document in its context, lm/ilm do not.
pub fn train_generator(
    kb: &KnowledgeBase,
    data: &[(Dialog, Label)],
    opts: &GeneratorTrainOpts,
) -> Result<NGramLM> {
    let vocab = build_vocabulary(kb, data);
    let mut corpus = Vec::new();
    for (dialog, label) in data {
        let (Some(response), true) = (&label.response, label.target) else {
            continue;
        };
        let mut ctx = ConditioningContext::from_dialog(dialog)?;
        if opts.kind == GenModelKind::Dm {
            let key = label
                .reference_key()
                .ok_or_else(|| Error::data("positive label without knowledge"))?;
            let doc = kb
                .resolve(key)
                .ok_or_else(|| Error::data(format!("label key {key} not in knowledge base")))?;
            ctx = ctx.with_document(document_tokens(doc));
        }
        if let Some(style) = opts.style {
            ctx = ctx.with_style(style);
        }
        corpus.push(training_sequence(&ctx, response, &vocab));
    }
    NGramLM::train(&corpus, opts.order, opts.delta, vocab)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrainOpts {
    pub alpha: f64,
    pub truncate: bool,
    pub seed: u64,
}

impl Default for ChannelTrainOpts {
    fn default() -> Self {
        ChannelTrainOpts {
            alpha: 1.0,
            truncate: true,
            seed: 0,
        }
    }
}

/// Trains the channel model on (document, response) pairs from the positive
/// dialogs.
pub fn train_channel(
    kb: &KnowledgeBase,
    data: &[(Dialog, Label)],
    opts: &ChannelTrainOpts,
) -> Result<ChannelModel> {
    let vocab = build_vocabulary(kb, data);
    let mut pairs = Vec::new();
    for (_, label) in data {
        let (Some(response), true) = (&label.response, label.target) else {
            continue;
        };
        let key = label
            .reference_key()
            .ok_or_else(|| Error::data("positive label without knowledge"))?;
        pairs.push((key.clone(), tokenize(response)));
    }
    if pairs.is_empty() {
        return Err(Error::data("channel training needs positive dialogs"));
    }
    ChannelModel::train(&pairs, kb, opts.alpha, opts.truncate, opts.seed, vocab)
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridStage {
    Selection,
    Generation,
}

impl std::str::FromStr for GridStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selection" => Ok(GridStage::Selection),
            "generation" => Ok(GridStage::Generation),
            other => Err(Error::config(format!("unknown grid stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
}

/// Sweeps (t, gamma) for selection R@1 or (lambda1, lambda2) for generation
/// BLEU-1/ROUGE-L, evaluated on the reference-positive turns of the labeled
/// data (ground-truth conditioning, so stages stay comparable).
pub fn grid_search(
    cfg: &PipelineConfig,
    stage: GridStage,
    ts: &[f64],
    gammas: &[f64],
    lambda1s: &[f64],
    lambda2s: &[f64],
) -> Result<Vec<GridPoint>> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let references = inputs
        .references
        .as_ref()
        .ok_or_else(|| Error::config("grid search needs a labels file"))?;
    let positive: Vec<bool> = references.iter().map(|l| l.target).collect();
    let positive_indices: Vec<usize> = (0..references.len()).filter(|&i| positive[i]).collect();
    if positive_indices.is_empty() {
        return Err(Error::data("no positive turns to sweep over"));
    }
    let mut points = Vec::new();

    match stage {
        GridStage::Selection => {
            let entity_model = models::load_relevance(cfg.model_path(ENTITY_FILE))?;
            let doc_model = models::load_relevance(cfg.model_path(DOC_FILE))?;
            for &t in ts {
                for &gamma in gammas {
                    let sel_cfg = SelectionConfig {
                        t,
                        gamma,
                        ..cfg.selection.clone()
                    };
                    let ranked = select_stage(
                        &entity_model,
                        &doc_model,
                        &inputs.dialogs,
                        &positive,
                        &inputs.kb,
                        &sel_cfg,
                        cfg.workers,
                    )?;
                    let rankings: Vec<Vec<DocumentKey>> = positive_indices
                        .iter()
                        .map(|&i| {
                            ranked[i]
                                .as_ref()
                                .unwrap()
                                .iter()
                                .map(|s| s.key.clone())
                                .collect()
                        })
                        .collect();
                    let ref_keys: Vec<DocumentKey> = positive_indices
                        .iter()
                        .map(|&i| references[i].reference_key().unwrap().clone())
                        .collect();
                    let report = selection_metrics(&rankings, &ref_keys, &[1])?;
                    points.push(GridPoint {
                        t: Some(t),
                        gamma: Some(gamma),
                        lambda1: None,
                        lambda2: None,
                        metrics: [("r_at_1".to_string(), report.recall_at_1())]
                            .into_iter()
                            .collect(),
                    });
                }
            }
        }
        GridStage::Generation => {
            let selected: Vec<Option<DocumentKey>> = references
                .iter()
                .map(|l| l.reference_key().cloned())
                .collect();
            for &lambda1 in lambda1s {
                for &lambda2 in lambda2s {
                    let mut run_cfg = cfg.clone();
                    run_cfg.fusion.lambda1 = lambda1;
                    run_cfg.fusion.lambda2 = lambda2;
                    run_cfg.fusion.lambda = lambda1;
                    let generation = GenerationModels::load(&run_cfg)?;
                    let responses = generate_stage(
                        &generation,
                        &inputs.dialogs,
                        &selected,
                        &inputs.kb,
                        &run_cfg,
                    )?;
                    let mut bleu_total = 0.0;
                    let mut rouge_total = 0.0;
                    for &i in &positive_indices {
                        let candidate = tokenize(responses[i].as_deref().unwrap_or(""));
                        let reference = tokenize(references[i].response.as_deref().unwrap());
                        bleu_total += bleu1(&candidate, std::slice::from_ref(&reference))?;
                        rouge_total += rouge_l(&candidate, &reference, 1.2);
                    }
                    let n = positive_indices.len() as f64;
                    points.push(GridPoint {
                        t: None,
                        gamma: None,
                        lambda1: Some(lambda1),
                        lambda2: Some(lambda2),
                        metrics: [
                            ("bleu1".to_string(), bleu_total / n),
                            ("rouge_l".to_string(), rouge_total / n),
                        ]
                        .into_iter()
                        .collect(),
                    });
                }
            }
        }
    }
    Ok(points)
}
