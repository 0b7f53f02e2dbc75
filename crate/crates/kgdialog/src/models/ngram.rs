//! N-gram language model with interpolated absolute discounting, the
//! desk-scale reference implementation of [`SequenceScorer`].
//!
//! Conditioning works by prefixing: the scorer treats the conditioning
//! context, a `<bos>` marker, and the response prefix as one token stream and
//! reads the last `order - 1` tokens as the history. Training corpora are
//! therefore built the same way (`context ++ <bos> ++ response ++ <eos>`);
//! plain unconditional corpora work too since histories are padded with
//! `<bos>` on the left.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::scorer::SequenceScorer;
use crate::models::vocab::{TokenId, Vocabulary, BOS};

#[derive(Debug, Clone, Default, PartialEq)]
struct HistoryStats {
    total: u64,
    counts: HashMap<TokenId, u64>,
}

impl HistoryStats {
    fn bump(&mut self, token: TokenId) {
        self.total += 1;
        *self.counts.entry(token).or_insert(0) += 1;
    }
}

/// Interpolated absolute discounting: at each order the observed counts are
/// discounted by `delta` and the freed mass is given to the next-lower order,
/// terminating in the uniform distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramLM {
    order: usize,
    delta: f64,
    vocab: Vocabulary,
    /// `tables[h]` maps histories of length `h` to their continuation counts.
    #[serde(
        serialize_with = "serialize_tables",
        deserialize_with = "deserialize_tables"
    )]
    tables: Vec<HashMap<Vec<TokenId>, HistoryStats>>,
}

impl NGramLM {
    /// Counts n-grams of orders `1..=order` over the corpus sequences.
    /// Histories at sequence starts are padded with `<bos>`. Sequences built
    /// as `context ++ <bos> ++ response ++ <eos>` count prediction events only
    /// after their last `<bos>` (the response region), with histories still
    /// reaching back into the context; plain sequences count everything since
    /// their last `<bos>` is the padding. `delta` is the absolute discount,
    /// strictly inside `(0, 1)`.
    pub fn train(
        corpus: &[Vec<TokenId>],
        order: usize,
        delta: f64,
        vocab: Vocabulary,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::data("empty n-gram training corpus"));
        }
        if order < 1 {
            return Err(Error::config("n-gram order must be at least 1"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!("discount {delta} outside (0, 1)")));
        }

        let mut tables: Vec<HashMap<Vec<TokenId>, HistoryStats>> =
            vec![HashMap::new(); order];
        for sequence in corpus {
            let mut padded = vec![BOS; order.max(2) - 1];
            padded.extend_from_slice(sequence);
            let last_bos = padded.iter().rposition(|&t| t == BOS).unwrap();
            for pos in (last_bos + 1)..padded.len() {
                let token = padded[pos];
                for h in 0..order.min(pos + 1) {
                    let history = padded[pos - h..pos].to_vec();
                    tables[h].entry(history).or_default().bump(token);
                }
            }
        }
        Ok(NGramLM {
            order,
            delta,
            vocab,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Interpolated probability of `token` after `history` (longest suffix of
    /// the stream, at most `order - 1` tokens).
    fn prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let uniform = 1.0 / self.vocab.len() as f64;
        let mut p = uniform;
        // Build up from the unigram level to the longest available history so
        // each level interpolates with the one below it.
        for h in 0..=history.len() {
            let hist = &history[history.len() - h..];
            if let Some(stats) = self.tables[h].get(hist) {
                let count = stats.counts.get(&token).copied().unwrap_or(0) as f64;
                let total = stats.total as f64;
                let distinct = stats.counts.len() as f64;
                let discounted = (count - self.delta).max(0.0) / total;
                let backoff_mass = self.delta * distinct / total;
                p = discounted + backoff_mass * p;
            }
            // Unseen history: keep the lower-order estimate as-is.
        }
        p
    }

    fn history(&self, context: &[TokenId], prefix: &[TokenId]) -> Vec<TokenId> {
        let span = self.order - 1;
        let mut stream = Vec::with_capacity(span);
        // Stream = <bos>-padding ++ context ++ <bos> ++ prefix; only the last
        // `span` tokens matter.
        let logical: Vec<TokenId> = context
            .iter()
            .copied()
            .chain(std::iter::once(BOS))
            .chain(prefix.iter().copied())
            .collect();
        if logical.len() >= span {
            stream.extend_from_slice(&logical[logical.len() - span..]);
        } else {
            stream.extend(std::iter::repeat_n(BOS, span - logical.len()));
            stream.extend_from_slice(&logical);
        }
        stream
    }
}

impl SequenceScorer for NGramLM {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn logprob_next(&self, context: &[TokenId], prefix: &[TokenId], token: TokenId) -> f64 {
        self.prob(&self.history(context, prefix), token).ln()
    }

    fn logprobs_next(&self, context: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let history = self.history(context, prefix);
        (0..self.vocab.len() as TokenId)
            .map(|t| self.prob(&history, t).ln())
            .collect()
    }
}

type TableEntry = (Vec<TokenId>, u64, Vec<(TokenId, u64)>);

fn serialize_tables<S: serde::Serializer>(
    tables: &[HashMap<Vec<TokenId>, HistoryStats>],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    let flat: Vec<Vec<TableEntry>> = tables
        .iter()
        .map(|table| {
            let mut entries: Vec<TableEntry> = table
                .iter()
                .map(|(hist, stats)| {
                    let mut counts: Vec<(TokenId, u64)> =
                        stats.counts.iter().map(|(&t, &c)| (t, c)).collect();
                    counts.sort_unstable();
                    (hist.clone(), stats.total, counts)
                })
                .collect();
            entries.sort();
            entries
        })
        .collect();
    serde::Serialize::serialize(&flat, serializer)
}

fn deserialize_tables<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<Vec<HashMap<Vec<TokenId>, HistoryStats>>, D::Error> {
    let flat: Vec<Vec<TableEntry>> = serde::Deserialize::deserialize(deserializer)?;
    Ok(flat
        .into_iter()
        .map(|entries| {
            entries
                .into_iter()
                .map(|(hist, total, counts)| {
                    (
                        hist,
                        HistoryStats {
                            total,
                            counts: counts.into_iter().collect(),
                        },
                    )
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::context::ConditioningContext;
    use crate::models::scorer::sequence_logprob;
    use crate::models::vocab::EOS;

    fn corpus(vocab: &mut Vocabulary, sentences: &[&str]) -> Vec<Vec<TokenId>> {
        sentences
            .iter()
            .map(|s| s.split_whitespace().map(|w| vocab.add(w)).collect())
            .collect()
    }

    #[test]
    fn small_discount_recovers_count_ratios() {
        let mut vocab = Vocabulary::new();
        let data = corpus(&mut vocab, &["a b <eos>", "a c <eos>"]);
        let lm = NGramLM::train(&data, 2, 1e-9, vocab.clone()).unwrap();
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        let p = lm.logprob_next(&[], &[a], b).exp();
        assert!((p - 0.5).abs() < 1e-6, "p(b|a) = {p}");
    }

    #[test]
    fn unigram_count_ratio() {
        let mut vocab = Vocabulary::new();
        let data = corpus(&mut vocab, &["a <eos>"]);
        let lm = NGramLM::train(&data, 1, 1e-9, vocab.clone()).unwrap();
        let a = vocab.id("a").unwrap();
        assert!((lm.logprob_next(&[], &[], a).exp() - 0.5).abs() < 1e-6);
        assert!((lm.logprob_next(&[], &[], EOS).exp() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn distribution_sums_to_one() {
        let mut vocab = Vocabulary::new();
        let data = corpus(&mut vocab, &["a b a <eos>", "b a b c <eos>", "c <eos>"]);
        for order in [1, 2, 3] {
            let lm = NGramLM::train(&data, order, 0.5, vocab.clone()).unwrap();
            for prefix in [vec![], vec![vocab.id("a").unwrap()], vec![UNKNOWN_PREFIX]] {
                let sum: f64 = lm
                    .logprobs_next(&[], &prefix)
                    .iter()
                    .map(|&lp| lp.exp())
                    .sum();
                assert!((sum - 1.0).abs() < 1e-6, "order {order}: sum {sum}");
            }
        }
    }

    const UNKNOWN_PREFIX: TokenId = 2; // <unk>: never seen as history

    #[test]
    fn hand_computed_chain_rule() {
        let mut vocab = Vocabulary::new();
        let data = corpus(&mut vocab, &["a b <eos>", "a c <eos>"]);
        let delta = 0.5;
        let lm = NGramLM::train(&data, 2, delta, vocab.clone()).unwrap();

        let v = vocab.len() as f64;
        // Unigram stats: 6 events, counts a:2 b:1 c:1 <eos>:2, distinct 4.
        let uni = |c: f64| (c - delta).max(0.0) / 6.0 + (delta * 4.0 / 6.0) * (1.0 / v);
        // Bigram after <bos>: a twice, distinct 1.
        let p_a = (2.0 - delta) / 2.0 + (delta * 1.0 / 2.0) * uni(2.0);
        // Bigram after a: b once, c once, distinct 2, total 2.
        let p_b_a = (1.0 - delta) / 2.0 + (delta * 2.0 / 2.0) * uni(1.0);
        // Bigram after b: <eos> once, distinct 1, total 1.
        let p_eos_b = (1.0 - delta) / 1.0 + (delta * 1.0 / 1.0) * uni(2.0);
        let expected = p_a.ln() + p_b_a.ln() + p_eos_b.ln();

        let ctx = ConditioningContext::default();
        let w: Vec<String> = ["a", "b", "<eos>"].iter().map(|s| s.to_string()).collect();
        let got = sequence_logprob(&lm, &ctx, &w).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
        assert!(got <= 0.0);
    }

    #[test]
    fn conditioning_context_changes_probabilities() {
        let mut vocab = Vocabulary::new();
        // Same response after different contexts.
        let data = corpus(
            &mut vocab,
            &["sunny <bos> beach <eos>", "rainy <bos> indoors <eos>"],
        );
        let lm = NGramLM::train(&data, 3, 0.3, vocab.clone()).unwrap();
        let sunny = vocab.id("sunny").unwrap();
        let rainy = vocab.id("rainy").unwrap();
        let beach = vocab.id("beach").unwrap();
        let p_sunny = lm.logprob_next(&[sunny], &[], beach);
        let p_rainy = lm.logprob_next(&[rainy], &[], beach);
        assert!(p_sunny > p_rainy);
    }

    #[test]
    fn training_validations() {
        let vocab = Vocabulary::new();
        assert!(NGramLM::train(&[], 2, 0.5, vocab.clone()).is_err());
        assert!(NGramLM::train(&[vec![EOS]], 0, 0.5, vocab.clone()).is_err());
        assert!(NGramLM::train(&[vec![EOS]], 2, 1.0, vocab.clone()).is_err());
        assert!(NGramLM::train(&[vec![EOS]], 2, 0.0, vocab).is_err());
    }

    #[test]
    fn serialization_reproduces_scores() {
        let mut vocab = Vocabulary::new();
        let data = corpus(&mut vocab, &["a b a <eos>", "b c <eos>"]);
        let lm = NGramLM::train(&data, 3, 0.4, vocab.clone()).unwrap();
        let json = serde_json::to_string(&lm).unwrap();
        let back: NGramLM = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lm);
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        assert_eq!(
            lm.logprob_next(&[], &[a], b).to_bits(),
            back.logprob_next(&[], &[a], b).to_bits()
        );
    }
}
