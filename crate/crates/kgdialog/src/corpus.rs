//! Data model and bit-exact I/O for knowledge bases, dialogs with ASR n-best
//! lists, label/prediction files, and cross-validation splitting.
//!
//! All types are immutable after load and safe to share read-only across
//! parallel workers.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{self, DeserializeSeed, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numeric::softmax;

/// An FAQ document: the question is the title, the answer the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub title: String,
    pub body: String,
}

/// An entity within a domain. Domain-level entities (e.g. a whole taxi
/// service) carry no name. `locality` is the city the entity belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub name: Option<String>,
    #[serde(rename = "city")]
    pub locality: Option<String>,
    #[serde(deserialize_with = "deserialize_unique_map")]
    pub docs: BTreeMap<String, Document>,
}

/// Identifies one document: `(domain, entity_id, doc_id)`. Orders
/// lexicographically by its fields, which is the deterministic tie-break
/// order used throughout selection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentKey {
    pub domain: String,
    pub entity_id: String,
    pub doc_id: String,
}

impl DocumentKey {
    pub fn new(
        domain: impl Into<String>,
        entity_id: impl Into<String>,
        doc_id: impl Into<String>,
    ) -> Self {
        DocumentKey {
            domain: domain.into(),
            entity_id: entity_id.into(),
            doc_id: doc_id.into(),
        }
    }
}

impl fmt::Display for DocumentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.domain, self.entity_id, self.doc_id)
    }
}

/// The domain → entity → document hierarchy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    pub domains: BTreeMap<String, BTreeMap<String, Entity>>,
}

impl KnowledgeBase {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let kb: KnowledgeBase = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// Documents must have non-empty title and body after trimming.
    pub fn validate(&self) -> Result<()> {
        for (key, doc) in self.iter_docs() {
            if doc.title.trim().is_empty() || doc.body.trim().is_empty() {
                return Err(Error::data(format!("document {key} has an empty title or body")));
            }
        }
        Ok(())
    }

    pub fn entity(&self, domain: &str, entity_id: &str) -> Option<&Entity> {
        self.domains.get(domain)?.get(entity_id)
    }

    pub fn resolve(&self, key: &DocumentKey) -> Option<&Document> {
        self.entity(&key.domain, &key.entity_id)?.docs.get(&key.doc_id)
    }

    /// All entities in deterministic (lexicographic) order.
    pub fn iter_entities(&self) -> impl Iterator<Item = (&str, &str, &Entity)> {
        self.domains.iter().flat_map(|(domain, entities)| {
            entities
                .iter()
                .map(move |(id, entity)| (domain.as_str(), id.as_str(), entity))
        })
    }

    /// All documents in deterministic (lexicographic) order.
    pub fn iter_docs(&self) -> impl Iterator<Item = (DocumentKey, &Document)> {
        self.iter_entities().flat_map(|(domain, entity_id, entity)| {
            entity.docs.iter().map(move |(doc_id, doc)| {
                (DocumentKey::new(domain, entity_id, doc_id), doc)
            })
        })
    }

    /// Keys of all documents sharing the given key's domain, in deterministic
    /// order. The default candidate pool for channel-model normalization.
    pub fn domain_pool(&self, domain: &str) -> Vec<DocumentKey> {
        match self.domains.get(domain) {
            None => Vec::new(),
            Some(entities) => entities
                .iter()
                .flat_map(|(entity_id, entity)| {
                    entity
                        .docs
                        .keys()
                        .map(move |doc_id| DocumentKey::new(domain, entity_id, doc_id))
                })
                .collect(),
        }
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn num_entities(&self) -> usize {
        self.domains.values().map(|e| e.len()).sum()
    }

    pub fn num_docs(&self) -> usize {
        self.iter_entities().map(|(_, _, e)| e.docs.len()).sum()
    }
}

impl Serialize for KnowledgeBase {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.domains.len()))?;
        for (domain, entities) in &self.domains {
            map.serialize_entry(domain, entities)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for KnowledgeBase {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct KbVisitor;

        impl<'de> Visitor<'de> for KbVisitor {
            type Value = KnowledgeBase;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of domain name to entity map")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut domains = BTreeMap::new();
                while let Some(domain) = access.next_key::<String>()? {
                    let entities = access.next_value_seed(UniqueMapSeed::<Entity>::new())?;
                    if domains.insert(domain.clone(), entities).is_some() {
                        return Err(de::Error::custom(format!("duplicate domain `{domain}`")));
                    }
                }
                Ok(KnowledgeBase { domains })
            }
        }

        deserializer.deserialize_map(KbVisitor)
    }
}

/// Deserializes a JSON object into a map, rejecting duplicate keys (plain
/// serde map deserialization silently keeps the last occurrence).
struct UniqueMapSeed<V> {
    _marker: std::marker::PhantomData<V>,
}

impl<V> UniqueMapSeed<V> {
    fn new() -> Self {
        UniqueMapSeed {
            _marker: std::marker::PhantomData,
        }
    }
}

impl<'de, V: Deserialize<'de>> DeserializeSeed<'de> for UniqueMapSeed<V> {
    type Value = BTreeMap<String, V>;

    fn deserialize<D: Deserializer<'de>>(
        self,
        deserializer: D,
    ) -> std::result::Result<Self::Value, D::Error> {
        struct MapVisitor<V> {
            _marker: std::marker::PhantomData<V>,
        }

        impl<'de, V: Deserialize<'de>> Visitor<'de> for MapVisitor<V> {
            type Value = BTreeMap<String, V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map with unique string keys")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((key, value)) = access.next_entry::<String, V>()? {
                    if out.insert(key.clone(), value).is_some() {
                        return Err(de::Error::custom(format!("duplicate key `{key}`")));
                    }
                }
                Ok(out)
            }
        }

        deserializer.deserialize_map(MapVisitor {
            _marker: std::marker::PhantomData,
        })
    }
}

fn deserialize_unique_map<'de, D, V>(
    deserializer: D,
) -> std::result::Result<BTreeMap<String, V>, D::Error>
where
    D: Deserializer<'de>,
    V: Deserialize<'de>,
{
    UniqueMapSeed::new().deserialize(deserializer)
}

/// Who produced a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "U")]
    User,
    #[serde(rename = "S")]
    Agent,
}

/// One ASR hypothesis: transcript text and an unnormalized log-weight.
/// Weights become probabilities through a softmax over the list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    #[serde(rename = "hyp")]
    pub text: String,
    pub score: f64,
}

/// Renormalized probabilities of an n-best list: softmax over the raw scores.
pub fn renormalized_weights(nbest: &[Hypothesis]) -> Vec<f64> {
    let scores: Vec<f64> = nbest.iter().map(|h| h.score).collect();
    softmax(&scores)
}

/// A single dialog turn, with the ASR n-best list when one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbest: Option<Vec<Hypothesis>>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::User,
            text: text.into(),
            nbest: None,
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::Agent,
            text: text.into(),
            nbest: None,
        }
    }
}

/// An ordered sequence of turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dialog {
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn new(turns: Vec<Turn>) -> Self {
        Dialog { turns }
    }

    /// The context window: all turns up to and including the last user turn.
    /// Errors when the dialog contains no user turn.
    pub fn context(&self) -> Result<&[Turn]> {
        let last_user = self
            .turns
            .iter()
            .rposition(|t| t.speaker == Speaker::User)
            .ok_or_else(|| Error::data("dialog has no user turn"))?;
        Ok(&self.turns[..=last_user])
    }

    /// The last user turn (the turn detection and selection act on).
    pub fn last_user_turn(&self) -> Result<&Turn> {
        Ok(self.context()?.last().unwrap())
    }

    fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::data("empty dialog"));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if let Some(nbest) = &turn.nbest {
                if turn.speaker != Speaker::User {
                    return Err(Error::data(format!("turn {i}: n-best list on a non-user turn")));
                }
                if nbest.is_empty() {
                    return Err(Error::data(format!("turn {i}: empty n-best list")));
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth annotation or system prediction for one dialog. `knowledge`
/// and `response` are present exactly when `target` is true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Label {
    pub target: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<Vec<DocumentKey>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl Label {
    pub fn negative() -> Self {
        Label {
            target: false,
            knowledge: None,
            response: None,
        }
    }

    pub fn positive(knowledge: Vec<DocumentKey>, response: impl Into<String>) -> Self {
        Label {
            target: true,
            knowledge: Some(knowledge),
            response: Some(response.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let has_knowledge = self.knowledge.as_ref().is_some_and(|k| !k.is_empty());
        let has_response = self.response.is_some();
        if self.target && !(has_knowledge && has_response) {
            return Err(Error::data(
                "label with target=true must carry knowledge and response",
            ));
        }
        if !self.target && (self.knowledge.is_some() || self.response.is_some()) {
            return Err(Error::data(
                "label with target=false must not carry knowledge or response",
            ));
        }
        Ok(())
    }

    /// First reference key, when the label is positive.
    pub fn reference_key(&self) -> Option<&DocumentKey> {
        self.knowledge.as_ref().and_then(|k| k.first())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a knowledge base file. See [`KnowledgeBase::load`].
pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    KnowledgeBase::load(path)
}

/// Loads dialogs, paired with labels when a labels file is given. Dialogs are
/// returned in file order; n-best lists are preserved verbatim.
pub fn load_dialogs(
    logs_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<Vec<(Dialog, Option<Label>)>> {
    let dialogs: Vec<Dialog> = read_json(logs_path.as_ref())?;
    for (i, dialog) in dialogs.iter().enumerate() {
        dialog
            .validate()
            .map_err(|e| Error::data(format!("dialog {i}: {e}")))?;
    }
    let labels = match labels_path {
        None => None,
        Some(path) => Some(load_labels(path)?),
    };
    if let Some(labels) = &labels {
        if labels.len() != dialogs.len() {
            return Err(Error::data(format!(
                "{} dialogs but {} labels",
                dialogs.len(),
                labels.len()
            )));
        }
    }
    Ok(match labels {
        None => dialogs.into_iter().map(|d| (d, None)).collect(),
        Some(labels) => dialogs
            .into_iter()
            .zip(labels.into_iter().map(Some))
            .collect(),
    })
}

/// Loads dialogs without labels.
pub fn load_logs(path: impl AsRef<Path>) -> Result<Vec<Dialog>> {
    Ok(load_dialogs(path, None)?.into_iter().map(|(d, _)| d).collect())
}

/// Writes dialogs in the logs.json format.
pub fn write_logs(dialogs: &[Dialog], path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), &dialogs)
}

/// Loads and validates a labels/predictions file.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    let labels: Vec<Label> = read_json(path.as_ref())?;
    for (i, label) in labels.iter().enumerate() {
        label
            .validate()
            .map_err(|e| Error::data(format!("label {i}: {e}")))?;
    }
    Ok(labels)
}

/// Writes predictions in the submission format: entries with `target=false`
/// contain only the target field; positive entries carry knowledge and
/// response. Round-trips through [`load_labels`].
pub fn write_predictions(results: &[Label], path: impl AsRef<Path>) -> Result<()> {
    for (i, label) in results.iter().enumerate() {
        label
            .validate()
            .map_err(|e| Error::data(format!("prediction {i}: {e}")))?;
    }
    write_json(path.as_ref(), &results)
}

/// One cross-validation fold: indices used for training and evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Splits `0..n_items` into `k` folds: indices are shuffled with a seeded PRNG
/// and dealt round-robin, so eval sizes differ by at most one and the result
/// is deterministic under the seed.
pub fn make_folds(n_items: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n_items {
        return Err(Error::config(format!(
            "fold count {k} out of range for {n_items} items"
        )));
    }
    let mut indices: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let mut eval_sets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, idx) in indices.into_iter().enumerate() {
        eval_sets[pos % k].push(idx);
    }
    Ok(eval_sets
        .into_iter()
        .map(|mut eval| {
            eval.sort_unstable();
            let mut in_eval = vec![false; n_items];
            for &i in &eval {
                in_eval[i] = true;
            }
            let train = (0..n_items).filter(|&i| !in_eval[i]).collect();
            Fold { train, eval }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_knowledge_base() {
        let f = write_temp(
            r#"{"hotel": {"1": {"name": "Alpha Hotel", "city": "cambridge", "docs": {
                "0": {"title": "Do you have parking?", "body": "Yes, free parking."},
                "1": {"title": "Is wifi available?", "body": "Wifi is complimentary."}
            }}}}"#,
        );
        let kb = KnowledgeBase::load(f.path()).unwrap();
        assert_eq!(kb.num_domains(), 1);
        assert_eq!(kb.num_entities(), 1);
        assert_eq!(kb.num_docs(), 2);
        assert!(kb.resolve(&DocumentKey::new("hotel", "1", "0")).is_some());
        assert!(kb.resolve(&DocumentKey::new("hotel", "1", "1")).is_some());
        assert!(kb.resolve(&DocumentKey::new("hotel", "1", "2")).is_none());
    }

    #[test]
    fn duplicate_doc_id_is_rejected() {
        let f = write_temp(
            r#"{"hotel": {"1": {"name": "A", "city": null, "docs": {
                "0": {"title": "q", "body": "a"},
                "0": {"title": "q2", "body": "a2"}
            }}}}"#,
        );
        let err = KnowledgeBase::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate key `0`"), "{err}");
    }

    #[test]
    fn five_domain_test_shaped_file_loads() {
        let mut body = String::from("{");
        for (i, domain) in ["hotel", "restaurant", "train", "taxi", "attraction"]
            .iter()
            .enumerate()
        {
            if i > 0 {
                body.push(',');
            }
            body.push_str(&format!(
                r#""{domain}": {{"1": {{"name": null, "city": null, "docs": {{"0": {{"title": "q", "body": "a"}}}}}}}}"#
            ));
        }
        body.push('}');
        let f = write_temp(&body);
        let kb = KnowledgeBase::load(f.path()).unwrap();
        assert_eq!(kb.num_domains(), 5);
    }

    #[test]
    fn empty_document_is_rejected() {
        let f = write_temp(
            r#"{"hotel": {"1": {"name": "A", "city": null, "docs": {"0": {"title": "  ", "body": "a"}}}}}"#,
        );
        let err = KnowledgeBase::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("empty title or body"), "{err}");
    }

    #[test]
    fn kb_round_trips() {
        let f = write_temp(
            r#"{"hotel": {"1": {"name": "Alpha", "city": "cambridge", "docs": {"0": {"title": "q", "body": "a"}}},
                          "2": {"name": null, "city": null, "docs": {"0": {"title": "q2", "body": "a2"}}}}}"#,
        );
        let kb = KnowledgeBase::load(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        kb.save(out.path()).unwrap();
        let back = KnowledgeBase::load(out.path()).unwrap();
        assert_eq!(kb, back);
    }

    #[test]
    fn dialogs_and_labels_align() {
        let logs = write_temp(
            r#"[[{"speaker": "U", "text": "hi"}],
                [{"speaker": "U", "text": "hello"}],
                [{"speaker": "S", "text": "yes"}, {"speaker": "U", "text": "thanks"}]]"#,
        );
        let labels = write_temp(
            r#"[{"target": false},
                {"target": true, "knowledge": [{"domain": "hotel", "entity_id": "1", "doc_id": "0"}], "response": "yes"},
                {"target": false}]"#,
        );
        let pairs = load_dialogs(logs.path(), Some(labels.path())).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs[1].1.as_ref().unwrap().target);

        let short = write_temp(r#"[{"target": false}, {"target": false}]"#);
        let err = load_dialogs(logs.path(), Some(short.path())).unwrap_err();
        assert!(err.to_string().contains("3 dialogs but 2 labels"), "{err}");
    }

    #[test]
    fn unknown_speaker_tag_is_rejected() {
        let logs = write_temp(r#"[[{"speaker": "X", "text": "hi"}]]"#);
        assert!(load_dialogs(logs.path(), None).is_err());
    }

    #[test]
    fn nbest_preserved_in_order() {
        let hyps: Vec<String> = (0..10)
            .map(|i| format!(r#"{{"hyp": "h{i}", "score": {}}}"#, -(i as f64)))
            .collect();
        let logs = write_temp(&format!(
            r#"[[{{"speaker": "U", "text": "h0", "nbest": [{}]}}]]"#,
            hyps.join(",")
        ));
        let dialogs = load_logs(logs.path()).unwrap();
        let nbest = dialogs[0].turns[0].nbest.as_ref().unwrap();
        assert_eq!(nbest.len(), 10);
        for (i, h) in nbest.iter().enumerate() {
            assert_eq!(h.text, format!("h{i}"));
        }
        // Round-trip equality.
        let out = tempfile::NamedTempFile::new().unwrap();
        write_logs(&dialogs, out.path()).unwrap();
        assert_eq!(load_logs(out.path()).unwrap(), dialogs);
    }

    #[test]
    fn nbest_on_agent_turn_is_rejected() {
        let logs =
            write_temp(r#"[[{"speaker": "S", "text": "x", "nbest": [{"hyp": "x", "score": 0}]}]]"#);
        assert!(load_logs(logs.path()).is_err());
    }

    #[test]
    fn renormalized_weights_sum_to_one() {
        let nbest = vec![
            Hypothesis { text: "a".into(), score: -1.3 },
            Hypothesis { text: "b".into(), score: -2.9 },
            Hypothesis { text: "c".into(), score: 40.0 },
        ];
        let w = renormalized_weights(&nbest);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predictions_format_is_exact() {
        let out = tempfile::NamedTempFile::new().unwrap();
        write_predictions(&[Label::negative()], out.path()).unwrap();
        let text = fs::read_to_string(out.path()).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value, serde_json::json!([{ "target": false }]));

        let positive = Label::positive(vec![DocumentKey::new("hotel", "1", "0")], "yes");
        write_predictions(std::slice::from_ref(&positive), out.path()).unwrap();
        let back = load_labels(out.path()).unwrap();
        assert_eq!(back, vec![positive]);
    }

    #[test]
    fn invalid_positive_prediction_is_rejected() {
        let out = tempfile::NamedTempFile::new().unwrap();
        let bad = Label {
            target: true,
            knowledge: None,
            response: Some("yes".into()),
        };
        assert!(write_predictions(&[bad], out.path()).is_err());
    }

    #[test]
    fn extra_label_fields_are_rejected() {
        let f = write_temp(r#"[{"target": false, "extra": 1}]"#);
        assert!(load_labels(f.path()).is_err());
    }

    #[test]
    fn label_round_trip() {
        let labels = vec![
            Label::negative(),
            Label::positive(vec![DocumentKey::new("taxi", "*", "3")], "sure thing"),
        ];
        let out = tempfile::NamedTempFile::new().unwrap();
        write_predictions(&labels, out.path()).unwrap();
        assert_eq!(load_labels(out.path()).unwrap(), labels);
    }

    #[test]
    fn folds_of_size_one() {
        let folds = make_folds(10, 10, 7).unwrap();
        assert_eq!(folds.len(), 10);
        assert!(folds.iter().all(|f| f.eval.len() == 1 && f.train.len() == 9));
    }

    #[test]
    fn folds_partition_indices() {
        let folds = make_folds(10, 3, 0).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.eval.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.eval.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for fold in &folds {
            assert!(fold.eval.iter().all(|i| !fold.train.contains(i)));
        }
    }

    #[test]
    fn folds_are_deterministic() {
        assert_eq!(make_folds(25, 4, 11).unwrap(), make_folds(25, 4, 11).unwrap());
    }

    #[test]
    fn fold_count_out_of_range() {
        assert!(make_folds(5, 1, 0).is_err());
        assert!(make_folds(5, 6, 0).is_err());
    }

    #[test]
    fn context_window_ends_at_last_user_turn() {
        let dialog = Dialog::new(vec![
            Turn::user("a"),
            Turn::agent("b"),
            Turn::user("c"),
            Turn::agent("d"),
        ]);
        let ctx = dialog.context().unwrap();
        assert_eq!(ctx.len(), 3);
        assert_eq!(dialog.last_user_turn().unwrap().text, "c");

        let agent_only = Dialog::new(vec![Turn::agent("x")]);
        assert!(agent_only.context().is_err());
    }
}
