//! Hashed bag-of-ngram logistic classifier: the relevance model behind
//! knowledge-seeking turn detection and entity/document selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::context::ConditioningContext;
use crate::models::vocab::SEP_TOKEN;

/// Number of trailing utterances passed to the classifiers.
pub const CONTEXT_UTTERANCES: usize = 3;
/// The context window is truncated to this many tokens, from the right.
pub const MAX_WINDOW_TOKENS: usize = 384;
/// Default hash dimension (2^18).
pub const DEFAULT_HASH_DIM: usize = 1 << 18;

/// Sparse feature vector: `(hash index, count)` pairs.
pub type SparseFeatures = Vec<(u32, f64)>;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn bigram_hash(a: &str, b: &str) -> u64 {
    let mut bytes = Vec::with_capacity(a.len() + b.len() + 1);
    bytes.extend_from_slice(a.as_bytes());
    bytes.push(0x1f);
    bytes.extend_from_slice(b.as_bytes());
    fnv1a(&bytes)
}

/// Hashed features over the classifier input: the last three utterances of
/// the context window (truncated to 384 tokens from the right), `<sep>`, then
/// the extra entity/document tokens.
///
/// Features are the bag of unigrams and bigrams of that stream plus
/// window/extra interaction features (per-token and per-bigram match
/// indicators and two overlap counts). A linear model over the plain bag
/// alone cannot express query–document overlap, so the interaction features
/// carry the relevance signal; with no extra tokens they vanish and the
/// features reduce to the plain hashed bag.
pub fn featurize(context: &ConditioningContext, extra: &[String], dim: usize) -> SparseFeatures {
    let mut window: Vec<&str> = Vec::new();
    for (i, turn) in context.window(CONTEXT_UTTERANCES).iter().enumerate() {
        if i > 0 {
            window.push(SEP_TOKEN);
        }
        window.extend(turn.iter().map(String::as_str));
    }
    if window.len() > MAX_WINDOW_TOKENS {
        window.drain(..window.len() - MAX_WINDOW_TOKENS);
    }
    let mut stream = window.clone();
    if !extra.is_empty() {
        stream.push(SEP_TOKEN);
        stream.extend(extra.iter().map(String::as_str));
    }

    let mut counts: std::collections::HashMap<u32, f64> = std::collections::HashMap::new();
    let mut add = |hash: u64, value: f64| {
        *counts.entry((hash % dim as u64) as u32).or_insert(0.0) += value;
    };
    for (i, token) in stream.iter().enumerate() {
        add(fnv1a(token.as_bytes()), 1.0);
        if i + 1 < stream.len() {
            add(bigram_hash(token, stream[i + 1]), 1.0);
        }
    }

    if !extra.is_empty() {
        use std::collections::HashSet;
        let window_set: HashSet<&str> = window.iter().copied().filter(|t| *t != SEP_TOKEN).collect();
        let extra_set: HashSet<&str> = extra.iter().map(String::as_str).collect();
        let mut matched = 0.0;
        for token in extra_set.intersection(&window_set) {
            add(fnv1a(format!("={token}").as_bytes()), 1.0);
            matched += 1.0;
        }
        if matched > 0.0 {
            add(fnv1a(b"#matched-unigrams"), matched);
        }
        let pair_set = |tokens: &[&str]| -> HashSet<(String, String)> {
            tokens
                .windows(2)
                .filter(|w| w[0] != SEP_TOKEN && w[1] != SEP_TOKEN)
                .map(|w| (w[0].to_string(), w[1].to_string()))
                .collect()
        };
        let extra_refs: Vec<&str> = extra.iter().map(String::as_str).collect();
        let window_pairs = pair_set(&window);
        let extra_pairs = pair_set(&extra_refs);
        let mut matched_pairs = 0.0;
        for (a, b) in extra_pairs.intersection(&window_pairs) {
            add(bigram_hash(&format!("={a}"), b), 1.0);
            matched_pairs += 1.0;
        }
        if matched_pairs > 0.0 {
            add(fnv1a(b"#matched-bigrams"), matched_pairs);
        }
    }

    let mut features: SparseFeatures = counts.into_iter().collect();
    features.sort_unstable_by_key(|&(i, _)| i);
    features
}

/// Anything that can score a (context, extra-tokens) pair with a relevance
/// probability in `(0, 1)`. Implemented by [`RelevanceClassifier`] and by
/// plain closures, which makes deterministic table stubs trivial in tests.
pub trait TurnRelevance {
    fn score(&self, context: &ConditioningContext, extra: &[String]) -> f64;
}

impl<F: Fn(&ConditioningContext, &[String]) -> f64> TurnRelevance for F {
    fn score(&self, context: &ConditioningContext, extra: &[String]) -> f64 {
        self(context, extra)
    }
}

/// Training hyperparameters for [`train_relevance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rate: 0.1,
            epochs: 12,
            seed: 0,
            dim: DEFAULT_HASH_DIM,
        }
    }
}

/// Logistic model over hashed features. Scores are sigmoid outputs clamped
/// strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceClassifier {
    dim: usize,
    bias: f64,
    #[serde(
        serialize_with = "serialize_weights",
        deserialize_with = "deserialize_weights"
    )]
    weights: Vec<f64>,
    pub hyper: TrainConfig,
}

const SCORE_FLOOR: f64 = 1e-12;

impl RelevanceClassifier {
    pub fn new(config: TrainConfig) -> Self {
        RelevanceClassifier {
            dim: config.dim,
            bias: 0.0,
            weights: vec![0.0; config.dim],
            hyper: config,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw decision value `w . x + b`.
    pub fn decision(&self, features: &SparseFeatures) -> f64 {
        features
            .iter()
            .fold(self.bias, |acc, &(i, v)| acc + self.weights[i as usize] * v)
    }

    /// Sigmoid of the decision value, clamped to `(0, 1)` exclusive.
    pub fn score_features(&self, features: &SparseFeatures) -> f64 {
        let z = self.decision(features);
        let p = 1.0 / (1.0 + (-z).exp());
        p.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    }

    /// One pass of stochastic gradient descent on logistic loss, visiting
    /// samples in an order drawn from `rng`.
    pub fn sgd_epoch(
        &mut self,
        samples: &[(SparseFeatures, bool)],
        rate: f64,
        rng: &mut ChaCha8Rng,
    ) {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        for idx in order {
            let (features, label) = &samples[idx];
            let z = self.decision(features);
            let p = 1.0 / (1.0 + (-z).exp());
            let g = (if *label { 1.0 } else { 0.0 }) - p;
            for &(i, v) in features {
                self.weights[i as usize] += rate * g * v;
            }
            self.bias += rate * g;
        }
    }
}

impl TurnRelevance for RelevanceClassifier {
    fn score(&self, context: &ConditioningContext, extra: &[String]) -> f64 {
        self.score_features(&featurize(context, extra, self.dim))
    }
}

/// Trains a logistic relevance classifier by seeded SGD. Deterministic under
/// the seed; errors when the samples cover only one class.
pub fn train_relevance(
    samples: &[(SparseFeatures, bool)],
    config: TrainConfig,
) -> Result<RelevanceClassifier> {
    let positives = samples.iter().filter(|(_, label)| *label).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::data("relevance training set covers only one class"));
    }
    let mut model = RelevanceClassifier::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        model.sgd_epoch(samples, config.rate, &mut rng);
    }
    Ok(model)
}

fn serialize_weights<S: serde::Serializer>(
    weights: &[f64],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    // Most hash buckets are never touched; store the length plus non-zeros.
    let sparse: Vec<(u32, f64)> = weights
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w != 0.0)
        .map(|(i, &w)| (i as u32, w))
        .collect();
    serde::Serialize::serialize(&(weights.len() as u64, sparse), serializer)
}

fn deserialize_weights<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<Vec<f64>, D::Error> {
    let (len, sparse): (u64, Vec<(u32, f64)>) = serde::Deserialize::deserialize(deserializer)?;
    let mut weights = vec![0.0; len as usize];
    for (i, w) in sparse {
        let slot = weights
            .get_mut(i as usize)
            .ok_or_else(|| serde::de::Error::custom(format!("weight index {i} out of range")))?;
        *slot = w;
    }
    Ok(weights)
}
