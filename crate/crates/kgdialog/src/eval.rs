//! Ranking metrics: detection precision/recall/F1, selection Recall@k,
//! generation BLEU-1 and ROUGE-L.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentKey;
use crate::error::{Error, Result};

/// Confusion counts and derived scores for the positive (knowledge-seeking)
/// class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Recall@k for each configured k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub instances: usize,
    pub recall_at: BTreeMap<usize, f64>,
}

impl SelectionReport {
    pub fn recall_at_1(&self) -> f64 {
        self.recall_at.get(&1).copied().unwrap_or(0.0)
    }
}

/// Corpus-averaged (macro) sentence scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub instances: usize,
    pub bleu1: f64,
    pub rouge_l: f64,
}

/// Binary precision/recall/F1 on the positive class.
pub fn detection_metrics(predictions: &[bool], references: &[bool]) -> Result<DetectionReport> {
    if predictions.len() != references.len() {
        return Err(Error::data(format!(
            "{} predictions but {} references",
            predictions.len(),
            references.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::data("empty prediction list"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &r) in predictions.iter().zip(references) {
        match (p, r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(DetectionReport {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
    })
}

/// Recall@k over reference-positive instances: the fraction whose reference
/// key appears among the top k of its ranked prediction list.
pub fn selection_metrics(
    ranked: &[Vec<DocumentKey>],
    references: &[DocumentKey],
    ks: &[usize],
) -> Result<SelectionReport> {
    if ranked.len() != references.len() {
        return Err(Error::data(format!(
            "{} rankings but {} references",
            ranked.len(),
            references.len()
        )));
    }
    if ranked.is_empty() {
        return Err(Error::data("empty selection instance list"));
    }
    for (i, ranking) in ranked.iter().enumerate() {
        if ranking.is_empty() {
            return Err(Error::data(format!("instance {i}: empty ranking")));
        }
    }
    let mut recall_at = BTreeMap::new();
    for &k in ks {
        let hits = ranked
            .iter()
            .zip(references)
            .filter(|(ranking, reference)| ranking.iter().take(k).any(|key| key == *reference))
            .count();
        recall_at.insert(k, hits as f64 / ranked.len() as f64);
    }
    Ok(SelectionReport {
        instances: ranked.len(),
        recall_at,
    })
}

/// Sentence BLEU-1: clipped unigram precision times the brevity penalty
/// `exp(min(0, 1 - r/c))`, with `r` the closest reference length (ties go to
/// the shorter reference). An empty candidate scores 0.
pub fn bleu1(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::data("bleu1 requires at least one reference"));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }

    let mut max_ref_counts: HashMap<&str, usize> = HashMap::new();
    for reference in references {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for token in reference {
            *counts.entry(token.as_str()).or_insert(0) += 1;
        }
        for (token, count) in counts {
            let entry = max_ref_counts.entry(token).or_insert(0);
            *entry = (*entry).max(count);
        }
    }

    let mut cand_counts: HashMap<&str, usize> = HashMap::new();
    for token in candidate {
        *cand_counts.entry(token.as_str()).or_insert(0) += 1;
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(token, &count)| count.min(max_ref_counts.get(token).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / candidate.len() as f64;

    let c = candidate.len() as f64;
    let r = references
        .iter()
        .map(|reference| reference.len())
        .min_by_key(|&len| {
            let diff = (len as i64 - candidate.len() as i64).abs();
            (diff, len)
        })
        .unwrap() as f64;
    let brevity = (1.0 - r / c).min(0.0).exp();
    Ok(precision * brevity)
}

/// ROUGE-L: LCS-based F-score with recall weight `beta`
/// (`F = (1 + beta^2) P R / (R + beta^2 P)`), zero when the LCS is empty.
pub fn rouge_l(candidate: &[String], reference: &[String], beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for token_a in a {
        let mut diagonal = 0;
        for (j, token_b) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if token_a == token_b {
                diagonal + 1
            } else {
                row[j + 1].max(row[j])
            };
            diagonal = up;
        }
    }
    row[b.len()]
}
