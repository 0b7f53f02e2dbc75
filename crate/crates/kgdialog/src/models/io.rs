//! Versioned JSON container for trained models: a magic string, a format
//! version, a model kind tag, and the model itself (which embeds its
//! vocabulary and parameter tables). Loading a saved model reproduces
//! identical scores.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::channel::ChannelModel;
use crate::models::ngram::NGramLM;
use crate::models::relevance::RelevanceClassifier;

pub const MODEL_MAGIC: &str = "kgdialog-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "kebab-case")]
enum ModelKind {
    Ngram(NGramLM),
    Channel(ChannelModel),
    Relevance(RelevanceClassifier),
}

impl ModelKind {
    fn name(&self) -> &'static str {
        match self {
            ModelKind::Ngram(_) => "ngram",
            ModelKind::Channel(_) => "channel",
            ModelKind::Relevance(_) => "relevance",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    #[serde(flatten)]
    kind: ModelKind,
}

fn save(kind: ModelKind, path: &Path) -> Result<()> {
    let file = ModelFile {
        magic: MODEL_MAGIC.to_string(),
        version: MODEL_VERSION,
        kind,
    };
    let mut text = serde_json::to_string(&file).map_err(|e| Error::model(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load(path: &Path, expected: &str) -> Result<ModelKind> {
    let text = fs::read_to_string(path).map_err(|_| {
        Error::model(format!("cannot read model file {}", path.display()))
    })?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::model(format!("{}: {e}", path.display())))?;
    if file.magic != MODEL_MAGIC {
        return Err(Error::model(format!("{}: bad magic `{}`", path.display(), file.magic)));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::model(format!(
            "{}: unsupported model version {}",
            path.display(),
            file.version
        )));
    }
    if file.kind.name() != expected {
        return Err(Error::model(format!(
            "{}: expected a {expected} model, found {}",
            path.display(),
            file.kind.name()
        )));
    }
    Ok(file.kind)
}

pub fn save_ngram(model: &NGramLM, path: impl AsRef<Path>) -> Result<()> {
    save(ModelKind::Ngram(model.clone()), path.as_ref())
}

pub fn load_ngram(path: impl AsRef<Path>) -> Result<NGramLM> {
    match load(path.as_ref(), "ngram")? {
        ModelKind::Ngram(m) => Ok(m),
        _ => unreachable!(),
    }
}

pub fn save_channel(model: &ChannelModel, path: impl AsRef<Path>) -> Result<()> {
    save(ModelKind::Channel(model.clone()), path.as_ref())
}

pub fn load_channel(path: impl AsRef<Path>) -> Result<ChannelModel> {
    match load(path.as_ref(), "channel")? {
        ModelKind::Channel(m) => Ok(m),
        _ => unreachable!(),
    }
}

pub fn save_relevance(model: &RelevanceClassifier, path: impl AsRef<Path>) -> Result<()> {
    save(ModelKind::Relevance(model.clone()), path.as_ref())
}

pub fn load_relevance(path: impl AsRef<Path>) -> Result<RelevanceClassifier> {
    match load(path.as_ref(), "relevance")? {
        ModelKind::Relevance(m) => Ok(m),
        _ => unreachable!(),
    }
}
