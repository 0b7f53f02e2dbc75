//! The conditional next-token scorer abstraction and table-driven reference
//! scorers used for verification.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::context::ConditioningContext;
use crate::models::vocab::{TokenId, Vocabulary, EOS};
use crate::numeric::log_softmax;

/// A conditional next-token log-probability model. Context and prefix ids are
/// in the scorer's own vocabulary; for every `(context, prefix)` the
/// distribution over the vocabulary sums to one.
pub trait SequenceScorer {
    fn vocab(&self) -> &Vocabulary;

    /// `log p(token | context, prefix)`.
    fn logprob_next(&self, context: &[TokenId], prefix: &[TokenId], token: TokenId) -> f64;

    /// Full next-token log-distribution; override when a batched form is
    /// cheaper than per-token calls.
    fn logprobs_next(&self, context: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        (0..self.vocab().len() as TokenId)
            .map(|t| self.logprob_next(context, prefix, t))
            .collect()
    }
}

/// Chain-rule log-probability of the token ids `w` under the scorer,
/// without requiring a terminating `<eos>`.
pub fn prefix_logprob(scorer: &dyn SequenceScorer, context: &[TokenId], w: &[TokenId]) -> f64 {
    let mut total = 0.0;
    for (n, &token) in w.iter().enumerate() {
        total += scorer.logprob_next(context, &w[..n], token);
    }
    total
}

/// Chain-rule log-probability of a complete response `w` (which must end with
/// `<eos>`) given the conditioning context. Words outside the scorer's
/// vocabulary map to `<unk>`.
pub fn sequence_logprob(
    scorer: &dyn SequenceScorer,
    context: &ConditioningContext,
    w: &[String],
) -> Result<f64> {
    let ids = scorer.vocab().encode(w);
    if ids.last() != Some(&EOS) {
        return Err(Error::data("sequence must end with <eos>"));
    }
    let ctx_ids = context.encode(scorer.vocab());
    Ok(prefix_logprob(scorer, &ctx_ids, &ids))
}

/// A context-independent scorer defined by explicit per-prefix distributions.
/// Prefixes without a row fall back to the default distribution.
#[derive(Debug, Clone)]
pub struct TableScorer {
    vocab: Vocabulary,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    fallback: Vec<f64>,
}

impl TableScorer {
    /// `fallback` is a probability distribution over the full vocabulary.
    pub fn new(vocab: Vocabulary, fallback: Vec<f64>) -> Result<Self> {
        let fallback = to_log_dist(&vocab, fallback)?;
        Ok(TableScorer {
            vocab,
            rows: HashMap::new(),
            fallback,
        })
    }

    /// Uniform over the whole vocabulary.
    pub fn uniform(vocab: Vocabulary) -> Self {
        let n = vocab.len();
        TableScorer {
            fallback: vec![(1.0 / n as f64).ln(); n],
            vocab,
            rows: HashMap::new(),
        }
    }

    /// Sets the next-token distribution (probabilities over the vocabulary)
    /// for one prefix.
    pub fn set_row(&mut self, prefix: Vec<TokenId>, probs: Vec<f64>) -> Result<()> {
        let dist = to_log_dist(&self.vocab, probs)?;
        self.rows.insert(prefix, dist);
        Ok(())
    }
}

fn to_log_dist(vocab: &Vocabulary, probs: Vec<f64>) -> Result<Vec<f64>> {
    if probs.len() != vocab.len() {
        return Err(Error::model(format!(
            "distribution over {} tokens for vocabulary of {}",
            probs.len(),
            vocab.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|&p| p < 0.0) {
        return Err(Error::model(format!("probabilities sum to {sum}, expected 1")));
    }
    Ok(probs
        .into_iter()
        .map(|p| if p == 0.0 { f64::NEG_INFINITY } else { p.ln() })
        .collect())
}

impl SequenceScorer for TableScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn logprob_next(&self, _context: &[TokenId], prefix: &[TokenId], token: TokenId) -> f64 {
        let row = self.rows.get(prefix).unwrap_or(&self.fallback);
        row[token as usize]
    }

    fn logprobs_next(&self, _context: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        self.rows.get(prefix).unwrap_or(&self.fallback).clone()
    }
}

/// A deterministic pseudo-random scorer: every prefix gets its own random
/// distribution over the active token set, derived from the seed and the
/// prefix alone. Tokens outside the active set have probability zero. Used to
/// drive decoder verification against brute-force enumeration.
#[derive(Debug, Clone)]
pub struct SeededScorer {
    vocab: Vocabulary,
    active: Vec<TokenId>,
    seed: u64,
}

impl SeededScorer {
    pub fn new(vocab: Vocabulary, active: Vec<TokenId>, seed: u64) -> Self {
        SeededScorer {
            vocab,
            active,
            seed,
        }
    }

    fn row(&self, prefix: &[TokenId]) -> Vec<f64> {
        // fnv1a over the prefix, mixed with the seed
        let mut h: u64 = 0xcbf29ce484222325;
        for &t in prefix {
            h ^= t as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h);
        let logits: Vec<f64> = self.active.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let logs = log_softmax(&logits);
        let mut row = vec![f64::NEG_INFINITY; self.vocab.len()];
        for (slot, &token) in self.active.iter().enumerate() {
            row[token as usize] = logs[slot];
        }
        row
    }
}

impl SequenceScorer for SeededScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn logprob_next(&self, _context: &[TokenId], prefix: &[TokenId], token: TokenId) -> f64 {
        self.row(prefix)[token as usize]
    }

    fn logprobs_next(&self, _context: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        self.row(prefix)
    }
}
