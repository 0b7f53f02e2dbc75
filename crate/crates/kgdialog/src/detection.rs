//! Knowledge-seeking turn detection: per-hypothesis classifier scoring with
//! ASR n-best fusion, ensembling, and F1-optimal threshold tuning.

use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::error::{Error, Result};
use crate::models::{ConditioningContext, TurnRelevance};
use crate::numeric::softmax;
use crate::textnorm::tokenize;

/// How per-hypothesis scores of an ASR n-best list are combined.
/// `Single` scores the transcript alone; `Max` takes the highest hypothesis
/// score; `Weighted` takes the sum weighted by the renormalized hypothesis
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NBestStrategy {
    Single,
    Max,
    Weighted,
}

impl std::str::FromStr for NBestStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(NBestStrategy::Single),
            "max" => Ok(NBestStrategy::Max),
            "weighted" => Ok(NBestStrategy::Weighted),
            other => Err(Error::config(format!("unknown n-best strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for NBestStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NBestStrategy::Single => "single",
            NBestStrategy::Max => "max",
            NBestStrategy::Weighted => "weighted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub strategy: NBestStrategy,
    /// Decision threshold: the turn is knowledge-seeking when score >= threshold.
    pub threshold: f64,
    /// Per-member ensemble weights; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_weights: Option<Vec<f64>>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            strategy: NBestStrategy::Single,
            threshold: 0.5,
            ensemble_weights: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if let Some(weights) = &self.ensemble_weights {
            if weights.iter().any(|&w| w < 0.0) {
                return Err(Error::config("ensemble weights must be non-negative"));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("ensemble weights sum to {sum}, expected 1")));
            }
        }
        Ok(())
    }
}

/// Combines per-hypothesis scores under a strategy. `logweights` are the raw
/// n-best scores; `Weighted` renormalizes them with a softmax. The result is
/// clamped into `[min(scores), max(scores)]`.
pub fn combine_nbest(
    scores: &[f64],
    logweights: &[f64],
    strategy: NBestStrategy,
) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::data("empty n-best score list"));
    }
    if scores.len() != logweights.len() {
        return Err(Error::data(format!(
            "{} scores but {} weights",
            scores.len(),
            logweights.len()
        )));
    }
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let combined = match strategy {
        // By convention the first hypothesis is the transcript itself.
        NBestStrategy::Single => scores[0],
        NBestStrategy::Max => hi,
        NBestStrategy::Weighted => {
            let weights = softmax(logweights);
            weights.iter().zip(scores).map(|(w, s)| w * s).sum()
        }
    };
    Ok(combined.clamp(lo, hi))
}

/// Scores the dialog's last user turn under the classifier, fusing ASR
/// hypotheses per the strategy: each hypothesis is substituted as the last
/// turn's text, scored in the same context window, and combined with
/// [`combine_nbest`]. Turn text is expected to be normalized already.
pub fn fused_relevance(
    classifier: &dyn TurnRelevance,
    dialog: &Dialog,
    extra: &[String],
    strategy: NBestStrategy,
) -> Result<f64> {
    let ctx = ConditioningContext::from_dialog(dialog)?;
    if strategy == NBestStrategy::Single {
        return Ok(classifier.score(&ctx, extra));
    }
    let last = dialog.last_user_turn()?;
    let nbest = last.nbest.as_ref().ok_or_else(|| {
        Error::data(format!(
            "strategy `{strategy}` requires an n-best list on the last user turn"
        ))
    })?;
    let mut scores = Vec::with_capacity(nbest.len());
    let mut logweights = Vec::with_capacity(nbest.len());
    for hypothesis in nbest {
        let mut hyp_ctx = ctx.clone();
        *hyp_ctx.turns.last_mut().unwrap() = tokenize(&hypothesis.text);
        scores.push(classifier.score(&hyp_ctx, extra));
        logweights.push(hypothesis.score);
    }
    combine_nbest(&scores, &logweights, strategy)
}

/// Detection decision for one dialog: the fused classifier score and whether
/// it clears the threshold.
pub fn detect_turn(
    classifier: &dyn TurnRelevance,
    dialog: &Dialog,
    config: &DetectorConfig,
) -> Result<(f64, bool)> {
    config.validate()?;
    let score = fused_relevance(classifier, dialog, &[], config.strategy)?;
    Ok((score, score >= config.threshold))
}

/// Weighted arithmetic mean of ensemble member probabilities (uniform
/// weights by default).
pub fn ensemble_scores(member_scores: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if member_scores.is_empty() {
        return Err(Error::data("empty ensemble member list"));
    }
    match weights {
        None => Ok(member_scores.iter().sum::<f64>() / member_scores.len() as f64),
        Some(weights) => {
            if weights.len() != member_scores.len() {
                return Err(Error::data(format!(
                    "{} members but {} ensemble weights",
                    member_scores.len(),
                    weights.len()
                )));
            }
            Ok(weights.iter().zip(member_scores).map(|(w, s)| w * s).sum())
        }
    }
}

/// Picks the decision threshold maximizing F1 on the positive class.
/// Candidate thresholds are 0, 1, and the midpoints between consecutive
/// sorted unique scores, which is exhaustive for a finite score set; the
/// lowest threshold achieving the maximal F1 wins.
pub fn tune_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::data(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::data("threshold tuning needs both classes"));
    }

    let mut unique: Vec<f64> = scores.to_vec();
    unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
    unique.dedup();
    let mut candidates = vec![0.0];
    candidates.extend(unique.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(1.0);

    let f1_at = |threshold: f64| -> f64 {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&score, &label) in scores.iter().zip(labels) {
            match (score >= threshold, label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        if tp == 0 {
            return 0.0;
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        2.0 * p * r / (p + r)
    };

    let mut best = (candidates[0], f1_at(candidates[0]));
    for &threshold in &candidates[1..] {
        let f1 = f1_at(threshold);
        if f1 > best.1 {
            best = (threshold, f1);
        }
    }
    Ok(best)
}
