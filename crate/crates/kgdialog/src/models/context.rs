//! The conditioning context shared by scorers and classifiers: the dialog
//! turns, the optional grounding document, and the optional style token.

use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::error::Result;
use crate::models::vocab::{TokenId, Vocabulary, SEP, SEP_TOKEN, SPOKEN, WRITTEN};
use crate::textnorm::tokenize;

/// Response style the generator is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Written,
    Spoken,
}

impl Style {
    pub fn token_id(self) -> TokenId {
        match self {
            Style::Written => WRITTEN,
            Style::Spoken => SPOKEN,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Style::Written => super::vocab::WRITTEN_TOKEN,
            Style::Spoken => super::vocab::SPOKEN_TOKEN,
        }
    }
}

impl std::str::FromStr for Style {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "written" => Ok(Style::Written),
            "spoken" => Ok(Style::Spoken),
            other => Err(crate::error::Error::config(format!("unknown style `{other}`"))),
        }
    }
}

/// Conditioning input for scoring: tokenized dialog turns `u_1^T`, the
/// grounding document's tokens (title then body) when present, and an optional
/// style token. When flattened to a single token stream, the style token comes
/// first, turns are joined with `<sep>`, and the document follows after
/// another `<sep>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditioningContext {
    pub style: Option<Style>,
    pub turns: Vec<Vec<String>>,
    pub document: Option<Vec<String>>,
}

impl ConditioningContext {
    pub fn new(turns: Vec<Vec<String>>) -> Self {
        ConditioningContext {
            style: None,
            turns,
            document: None,
        }
    }

    /// Tokenizes the dialog's context window (all turns through the last user
    /// turn) by whitespace. Turn text is expected to be normalized already.
    pub fn from_dialog(dialog: &Dialog) -> Result<Self> {
        let turns = dialog
            .context()?
            .iter()
            .map(|t| tokenize(&t.text))
            .collect();
        Ok(Self::new(turns))
    }

    pub fn with_document(mut self, doc_tokens: Vec<String>) -> Self {
        self.document = Some(doc_tokens);
        self
    }

    /// Sets (or replaces) the style token; applying twice with the same style
    /// is a no-op.
    pub fn with_style(mut self, style: Style) -> Self {
        self.style = Some(style);
        self
    }

    /// Drops the document, leaving the ungrounded context `u_1^T` used by the
    /// lm and ilm scorers.
    pub fn without_document(&self) -> Self {
        ConditioningContext {
            style: self.style,
            turns: self.turns.clone(),
            document: None,
        }
    }

    /// The last `n` turns (all turns when fewer exist).
    pub fn window(&self, n: usize) -> &[Vec<String>] {
        let start = self.turns.len().saturating_sub(n);
        &self.turns[start..]
    }

    /// Flattens to the single conditioning token stream, as strings.
    pub fn token_stream(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(style) = self.style {
            out.push(style.token().to_string());
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if i > 0 {
                out.push(SEP_TOKEN.to_string());
            }
            out.extend(turn.iter().cloned());
        }
        if let Some(doc) = &self.document {
            out.push(SEP_TOKEN.to_string());
            out.extend(doc.iter().cloned());
        }
        out
    }

    /// Flattens and encodes into the given vocabulary.
    pub fn encode(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        let mut out = Vec::new();
        if let Some(style) = self.style {
            out.push(style.token_id());
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            out.extend(turn.iter().map(|w| vocab.id_or_unk(w)));
        }
        if let Some(doc) = &self.document {
            out.push(SEP);
            out.extend(doc.iter().map(|w| vocab.id_or_unk(w)));
        }
        out
    }
}
