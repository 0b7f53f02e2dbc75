//! Token/id vocabulary with fixed reserved tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const SEP: TokenId = 3;
pub const WRITTEN: TokenId = 4;
pub const SPOKEN: TokenId = 5;

pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SEP_TOKEN: &str = "<sep>";
pub const WRITTEN_TOKEN: &str = "<written>";
pub const SPOKEN_TOKEN: &str = "<spoken>";

const RESERVED: [&str; 6] = [
    BOS_TOKEN,
    EOS_TOKEN,
    UNK_TOKEN,
    SEP_TOKEN,
    WRITTEN_TOKEN,
    SPOKEN_TOKEN,
];

/// A token ↔ id bijection. Ids `0..=5` are the reserved tokens `<bos>`,
/// `<eos>`, `<unk>`, `<sep>`, `<written>`, `<spoken>`; unknown strings map to
/// `<unk>` when encoding, never to an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary containing only the reserved tokens.
    pub fn new() -> Self {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for token in RESERVED {
            vocab.add(token);
        }
        vocab
    }

    /// Builds a vocabulary from a token stream, in first-seen order after the
    /// reserved block.
    pub fn from_corpus<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = Self::new();
        for token in tokens {
            vocab.add(token);
        }
        vocab
    }

    /// Adds a token (no-op when present) and returns its id.
    pub fn add(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved block is always present
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> {
        0..self.len() as TokenId
    }

    pub fn encode(&self, words: &[String]) -> Vec<TokenId> {
        words.iter().map(|w| self.id_or_unk(w)).collect()
    }

    /// Decodes ids into owned words.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    /// Joins decoded ids with spaces, dropping a trailing `<eos>`.
    pub fn render(&self, ids: &[TokenId]) -> String {
        let content = match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        };
        content
            .iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Id translation table into another vocabulary: `map[id]` is the id in
    /// `other` of the same token string, `<unk>` when absent. Returns `None`
    /// when the vocabularies are identical (the identity map).
    pub fn translation_to(&self, other: &Vocabulary) -> Option<Vec<TokenId>> {
        if self == other {
            return None;
        }
        Some(
            self.tokens
                .iter()
                .map(|t| other.id_or_unk(t))
                .collect(),
        )
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()]
                .iter()
                .zip(RESERVED)
                .any(|(a, b)| a != b)
        {
            return Err(Error::model("vocabulary does not start with the reserved tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), i as TokenId).is_some() {
                return Err(Error::model(format!("duplicate vocabulary token `{token}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(vocab: Vocabulary) -> Self {
        vocab.tokens
    }
}
