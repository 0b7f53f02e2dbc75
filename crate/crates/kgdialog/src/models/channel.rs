//! Channel model: the posterior `p(K' | w, u_1^T)` of a grounding document
//! given a (partial) response, normalized over a candidate pool. The
//! reference implementation is a naive Bayes model over response tokens with
//! add-alpha smoothing, which is natively defined on every prefix length.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentKey, KnowledgeBase};
use crate::error::{Error, Result};
use crate::models::vocab::{TokenId, Vocabulary};
use crate::numeric::logsumexp;

/// Document posterior over a candidate pool, valid on partial responses.
/// An empty prefix yields the (pool-normalized) prior.
pub trait ChannelScorer {
    fn vocab(&self) -> &Vocabulary;

    /// `log p(key | prefix, context)` normalized over `pool`. Errors when
    /// `key` is not in the pool.
    fn log_posterior(
        &self,
        key: &DocumentKey,
        prefix: &[TokenId],
        context: &[TokenId],
        pool: &[DocumentKey],
    ) -> Result<f64>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct DocStats {
    /// Number of training pairs grounded in this document.
    pairs: u64,
    /// Total response tokens counted for this document.
    total: u64,
    #[serde(
        serialize_with = "serialize_counts",
        deserialize_with = "deserialize_counts"
    )]
    counts: HashMap<TokenId, u64>,
}

/// Explicit channel-model statistics for one document: the key, the number
/// of training pairs, and the response token counts.
pub type DocCountEntry = (DocumentKey, u64, Vec<(TokenId, u64)>);

/// Naive Bayes channel model: per-document unigram likelihood tables with
/// add-alpha smoothing; priors follow the add-one-smoothed training-pair
/// counts. The naive Bayes form ignores the dialog context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    alpha: f64,
    vocab: Vocabulary,
    #[serde(
        serialize_with = "serialize_docs",
        deserialize_with = "deserialize_docs"
    )]
    docs: BTreeMap<DocumentKey, DocStats>,
}

impl ChannelModel {
    /// Trains on `(document, response tokens)` pairs. When `truncate` is set,
    /// each response is cut to a length drawn uniformly from `1..=len` before
    /// counting (seeded), so the model matches the partial prefixes it will
    /// score at decode time. Every document of the knowledge base gets a
    /// (possibly empty) likelihood table; priors follow the pair counts.
    pub fn train(
        pairs: &[(DocumentKey, Vec<String>)],
        kb: &KnowledgeBase,
        alpha: f64,
        truncate: bool,
        seed: u64,
        vocab: Vocabulary,
    ) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::config(format!("smoothing alpha {alpha} must be positive")));
        }
        let mut docs: BTreeMap<DocumentKey, DocStats> = kb
            .iter_docs()
            .map(|(key, _)| (key, DocStats::default()))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (key, response) in pairs {
            let stats = docs
                .get_mut(key)
                .ok_or_else(|| Error::data(format!("training key {key} not in knowledge base")))?;
            stats.pairs += 1;
            let cut = if truncate && !response.is_empty() {
                rng.gen_range(1..=response.len())
            } else {
                response.len()
            };
            for word in &response[..cut] {
                let token = vocab.id_or_unk(word);
                stats.total += 1;
                *stats.counts.entry(token).or_insert(0) += 1;
            }
        }
        Ok(ChannelModel { alpha, vocab, docs })
    }

    /// Builds a model from explicit per-document pair counts and token counts.
    pub fn from_counts(
        vocab: Vocabulary,
        alpha: f64,
        entries: Vec<DocCountEntry>,
    ) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::config(format!("smoothing alpha {alpha} must be positive")));
        }
        let docs = entries
            .into_iter()
            .map(|(key, pairs, counts)| {
                let total = counts.iter().map(|&(_, c)| c).sum();
                (
                    key,
                    DocStats {
                        pairs,
                        total,
                        counts: counts.into_iter().collect(),
                    },
                )
            })
            .collect();
        Ok(ChannelModel { alpha, vocab, docs })
    }

    /// Smoothed `log p(token | key)`.
    fn token_loglik(&self, stats: &DocStats, token: TokenId) -> f64 {
        let count = stats.counts.get(&token).copied().unwrap_or(0) as f64;
        let denom = stats.total as f64 + self.alpha * self.vocab.len() as f64;
        ((count + self.alpha) / denom).ln()
    }

    /// Unnormalized log-score `log p(key) + sum_i log p(w_i | key)`. Priors
    /// are add-one-smoothed pair counts, `ln(pairs + 1)` up to a constant
    /// that cancels in the pool normalization, so documents the training set
    /// never grounded keep nonzero posterior mass and online decoding stays
    /// finite.
    fn log_joint(&self, key: &DocumentKey, prefix: &[TokenId]) -> Result<f64> {
        let stats = self
            .docs
            .get(key)
            .ok_or_else(|| Error::model(format!("document {key} unknown to the channel model")))?;
        let prior = (stats.pairs as f64 + 1.0).ln();
        Ok(prefix
            .iter()
            .fold(prior, |acc, &t| acc + self.token_loglik(stats, t)))
    }
}

impl ChannelScorer for ChannelModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn log_posterior(
        &self,
        key: &DocumentKey,
        prefix: &[TokenId],
        _context: &[TokenId],
        pool: &[DocumentKey],
    ) -> Result<f64> {
        if !pool.contains(key) {
            return Err(Error::model(format!("document {key} not in the candidate pool")));
        }
        let own = self.log_joint(key, prefix)?;
        let scores = pool
            .iter()
            .map(|k| self.log_joint(k, prefix))
            .collect::<Result<Vec<f64>>>()?;
        Ok(own - logsumexp(&scores))
    }
}

fn serialize_docs<S: serde::Serializer>(
    docs: &BTreeMap<DocumentKey, DocStats>,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    let entries: Vec<(&DocumentKey, &DocStats)> = docs.iter().collect();
    serde::Serialize::serialize(&entries, serializer)
}

fn deserialize_docs<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<BTreeMap<DocumentKey, DocStats>, D::Error> {
    let entries: Vec<(DocumentKey, DocStats)> = serde::Deserialize::deserialize(deserializer)?;
    Ok(entries.into_iter().collect())
}

fn serialize_counts<S: serde::Serializer>(
    counts: &HashMap<TokenId, u64>,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    let mut entries: Vec<(TokenId, u64)> = counts.iter().map(|(&t, &c)| (t, c)).collect();
    entries.sort_unstable();
    serde::Serialize::serialize(&entries, serializer)
}

fn deserialize_counts<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<HashMap<TokenId, u64>, D::Error> {
    let entries: Vec<(TokenId, u64)> = serde::Deserialize::deserialize(deserializer)?;
    Ok(entries.into_iter().collect())
}
