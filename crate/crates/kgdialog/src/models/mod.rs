//! Scorer abstractions and desk-scale reference implementations: the
//! vocabulary and conditioning context shared by all scorers, the
//! [`SequenceScorer`] trait with an interpolated absolute-discount n-gram
//! reference, the [`ChannelScorer`] trait (document posterior given a partial
//! response) with a naive Bayes reference, and the hashed logistic
//! [`RelevanceClassifier`] behind detection and selection.

pub mod channel;
pub mod context;
pub mod io;
pub mod ngram;
pub mod relevance;
pub mod scorer;
pub mod vocab;

pub use channel::{ChannelModel, ChannelScorer};
pub use context::{ConditioningContext, Style};
pub use io::{load_channel, load_ngram, load_relevance, save_channel, save_ngram, save_relevance};
pub use ngram::NGramLM;
pub use relevance::{featurize, train_relevance, RelevanceClassifier, SparseFeatures, TrainConfig, TurnRelevance};
pub use scorer::{sequence_logprob, prefix_logprob, SeededScorer, SequenceScorer, TableScorer};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, SEP, UNK, WRITTEN, SPOKEN};
