//! Synthetic knowledge-seeking detection samples: splice each FAQ question
//! into a same-domain dialog, substituting the document's entity name with
//! the dialog's.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialog, DocumentKey, KnowledgeBase, Label, Turn};
use crate::error::{Error, Result};
use crate::textnorm::{normalize, NormalizerConfig};

/// A source dialog for augmentation together with the entity it talks about
/// (None when the dialog has no named entity).
#[derive(Debug, Clone, PartialEq)]
pub struct SourceDialog {
    pub dialog: Dialog,
    pub entity_name: Option<String>,
}

/// Sidecar entry aligned by index with a logs.json file: the dialog's domain
/// and the entity it mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntity {
    pub domain: String,
    pub entity_name: Option<String>,
}

/// Zips dialogs with their sidecar entries and groups them by domain.
pub fn group_sources(
    dialogs: Vec<Dialog>,
    entities: Vec<SourceEntity>,
) -> Result<BTreeMap<String, Vec<SourceDialog>>> {
    if dialogs.len() != entities.len() {
        return Err(Error::data(format!(
            "{} source dialogs but {} sidecar entries",
            dialogs.len(),
            entities.len()
        )));
    }
    let mut map: BTreeMap<String, Vec<SourceDialog>> = BTreeMap::new();
    for (dialog, entry) in dialogs.into_iter().zip(entities) {
        map.entry(entry.domain).or_default().push(SourceDialog {
            dialog,
            entity_name: entry.entity_name,
        });
    }
    Ok(map)
}

/// An augmented positive detection sample: the source dialog plus a new final
/// user turn carrying the document's question.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub dialog: Dialog,
    pub key: DocumentKey,
    /// Whether the document's entity name was found and replaced in the
    /// title. False for domain-level documents and for titles that never
    /// mention the entity.
    pub substituted: bool,
}

impl AugmentedSample {
    /// The sample's positive label. The document body stands in as the
    /// reference response so the label satisfies the prediction schema.
    pub fn label(&self, kb: &KnowledgeBase, norm: &NormalizerConfig) -> Label {
        let body = kb
            .resolve(&self.key)
            .map(|doc| normalize(&doc.body, norm))
            .unwrap_or_default();
        Label::positive(vec![self.key.clone()], body)
    }
}

/// Replaces every whole-phrase, case-insensitive occurrence of `needle`
/// in `haystack` with `replacement`. Both sides are compared after
/// lowercasing; boundaries are non-alphanumeric characters.
fn replace_entity(haystack: &str, needle: &str, replacement: &str) -> Option<String> {
    let lower: Vec<char> = haystack.to_lowercase().chars().collect();
    let needle: Vec<char> = needle.to_lowercase().chars().collect();
    if needle.is_empty() || lower.len() < needle.len() {
        return None;
    }
    let mut out = String::new();
    let mut i = 0;
    let mut hit = false;
    while i < lower.len() {
        let end = i + needle.len();
        let boundary_before = i == 0 || !lower[i - 1].is_alphanumeric();
        let matches = end <= lower.len()
            && boundary_before
            && lower[i..end] == needle[..]
            && (end == lower.len() || !lower[end].is_alphanumeric());
        if matches {
            out.push_str(replacement);
            i = end;
            hit = true;
        } else {
            out.push(lower[i]);
            i += 1;
        }
    }
    hit.then_some(out)
}

/// Generates one positive detection sample per document: a seeded-random
/// same-domain source dialog is extended with a new user turn carrying the
/// document's question, with the document's entity name swapped for the
/// dialog's entity and the text normalized. Deterministic under the seed.
pub fn generate_detection_samples(
    kb: &KnowledgeBase,
    sources: &BTreeMap<String, Vec<SourceDialog>>,
    norm: &NormalizerConfig,
    seed: u64,
) -> Result<Vec<AugmentedSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (domain, entity_id, entity) in kb.iter_entities() {
        let domain_sources = sources
            .get(domain)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                Error::data(format!("domain `{domain}` has documents but no source dialogs"))
            })?;
        for (doc_id, doc) in &entity.docs {
            let source = &domain_sources[rng.gen_range(0..domain_sources.len())];
            let (question, substituted) = match (&entity.name, &source.entity_name) {
                (Some(kb_name), Some(dialog_name)) => {
                    match replace_entity(&doc.title, kb_name, dialog_name) {
                        Some(replaced) => (replaced, true),
                        None => (doc.title.clone(), false),
                    }
                }
                _ => (doc.title.clone(), false),
            };
            let mut dialog = source.dialog.clone();
            dialog.turns.push(Turn::user(normalize(&question, norm)));
            samples.push(AugmentedSample {
                dialog,
                key: DocumentKey::new(domain, entity_id, doc_id),
                substituted,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Entity};
    use std::collections::BTreeMap;

    fn kb_one_doc(domain: &str, name: Option<&str>, title: &str) -> KnowledgeBase {
        let mut kb = KnowledgeBase::default();
        kb.domains.insert(
            domain.to_string(),
            [(
                "1".to_string(),
                Entity {
                    name: name.map(str::to_string),
                    locality: None,
                    docs: [(
                        "0".to_string(),
                        Document {
                            title: title.to_string(),
                            body: "The answer.".to_string(),
                        },
                    )]
                    .into_iter()
                    .collect(),
                },
            )]
            .into_iter()
            .collect(),
        );
        kb
    }

    fn sources_for(domain: &str, entity_name: Option<&str>) -> BTreeMap<String, Vec<SourceDialog>> {
        let mut sources = BTreeMap::new();
        sources.insert(
            domain.to_string(),
            vec![SourceDialog {
                dialog: Dialog::new(vec![
                    Turn::user("i am looking for a place to stay"),
                    Turn::agent("how about this one"),
                ]),
                entity_name: entity_name.map(str::to_string),
            }],
        );
        sources
    }

    #[test]
    fn entity_name_is_substituted_and_normalized() {
        let kb = kb_one_doc(
            "hotel",
            Some("Taj Campton Place"),
            "Is there a smoking area at Taj Campton Place?",
        );
        let sources = sources_for("hotel", Some("hotel alpha"));
        let norm = NormalizerConfig::default();
        let samples = generate_detection_samples(&kb, &sources, &norm, 0).unwrap();
        assert_eq!(samples.len(), 1);
        let last = samples[0].dialog.turns.last().unwrap();
        assert_eq!(last.text, "is there a smoking area at hotel alpha");
        assert!(samples[0].substituted);
    }

    #[test]
    fn domain_level_doc_keeps_title_verbatim() {
        let kb = kb_one_doc("taxi", None, "What is the maximum number of passengers?");
        let sources = sources_for("taxi", None);
        let norm = NormalizerConfig::default();
        let samples = generate_detection_samples(&kb, &sources, &norm, 0).unwrap();
        assert_eq!(
            samples[0].dialog.turns.last().unwrap().text,
            "what is the maximum number of passengers"
        );
        assert!(!samples[0].substituted);
    }

    #[test]
    fn one_sample_per_document_and_deterministic() {
        let mut kb = KnowledgeBase::default();
        let docs: BTreeMap<String, Document> = (0..5)
            .map(|i| {
                (
                    i.to_string(),
                    Document {
                        title: format!("Question {i} about Blue Inn?"),
                        body: "Answer.".to_string(),
                    },
                )
            })
            .collect();
        kb.domains.insert(
            "hotel".to_string(),
            [
                (
                    "1".to_string(),
                    Entity {
                        name: Some("Blue Inn".into()),
                        locality: None,
                        docs: docs.clone(),
                    },
                ),
                (
                    "2".to_string(),
                    Entity {
                        name: Some("Red Lodge".into()),
                        locality: None,
                        docs,
                    },
                ),
            ]
            .into_iter()
            .collect(),
        );
        let sources = sources_for("hotel", Some("green house"));
        let norm = NormalizerConfig::default();
        let a = generate_detection_samples(&kb, &sources, &norm, 42).unwrap();
        let b = generate_detection_samples(&kb, &sources, &norm, 42).unwrap();
        assert_eq!(a.len(), kb.num_docs());
        assert_eq!(a, b);
    }

    #[test]
    fn missing_domain_sources_is_an_error() {
        let kb = kb_one_doc("hotel", Some("A"), "Any question about A?");
        let sources: BTreeMap<String, Vec<SourceDialog>> = BTreeMap::new();
        assert!(
            generate_detection_samples(&kb, &sources, &NormalizerConfig::default(), 0).is_err()
        );
    }

    #[test]
    fn final_turn_is_fully_normalized() {
        let kb = kb_one_doc(
            "hotel",
            Some("Grand 42 Hotel"),
            "Does Grand 42 Hotel have Wi-Fi, TVs, and 3 pools?",
        );
        let sources = sources_for("hotel", Some("Sunny Lodge"));
        let norm = NormalizerConfig::default();
        let samples = generate_detection_samples(&kb, &sources, &norm, 1).unwrap();
        let text = &samples[0].dialog.turns.last().unwrap().text;
        assert_eq!(text, "does sunny lodge have wi-fi tvs and three pools");
        assert!(!text.chars().any(|c| c.is_uppercase() || c.is_ascii_digit()));
        // The original entity name is gone.
        assert!(!text.contains("grand"));
    }
}
