//! Template-driven synthetic data: a toy knowledge base and grounded dialogs
//! for end-to-end smoke testing and demos. Knowledge-base text is written
//! style (capitalized, punctuated); dialog turns are spoken style (already
//! normalized), with ASR-like n-best lists on the final user turns.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::SourceDialog;
use crate::corpus::{
    Dialog, Document, DocumentKey, Entity, Hypothesis, KnowledgeBase, Label, Turn,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub domains: usize,
    pub entities_per_domain: usize,
    pub docs_per_entity: usize,
    pub dialogs: usize,
    /// Fraction of dialogs whose final turn is knowledge-seeking.
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            domains: 3,
            entities_per_domain: 4,
            docs_per_entity: 5,
            dialogs: 500,
            positive_fraction: 0.5,
            seed: 0,
        }
    }
}

pub struct SynthData {
    pub kb: KnowledgeBase,
    pub dialogs: Vec<(Dialog, Label)>,
    /// Per-dialog domain and entity name, aligned by index (the sidecar the
    /// augmentation stage consumes).
    pub sources: Vec<(String, Option<String>)>,
}

impl SynthData {
    /// Splits dialog indices into train/eval by a seeded shuffle.
    pub fn split(&self, eval_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        use rand::seq::SliceRandom;
        let mut indices: Vec<usize> = (0..self.dialogs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let eval_len = ((self.dialogs.len() as f64) * eval_fraction).round() as usize;
        let (eval, train) = indices.split_at(eval_len.min(indices.len()));
        let mut eval = eval.to_vec();
        let mut train = train.to_vec();
        eval.sort_unstable();
        train.sort_unstable();
        (train, eval)
    }

    /// Augmentation sources grouped by domain.
    pub fn augment_sources(&self) -> BTreeMap<String, Vec<SourceDialog>> {
        let mut map: BTreeMap<String, Vec<SourceDialog>> = BTreeMap::new();
        for ((dialog, _), (domain, entity_name)) in self.dialogs.iter().zip(&self.sources) {
            map.entry(domain.clone()).or_default().push(SourceDialog {
                dialog: dialog.clone(),
                entity_name: entity_name.clone(),
            });
        }
        map
    }
}

const DOMAIN_NAMES: [&str; 6] = ["hotel", "restaurant", "attraction", "museum", "cafe", "theater"];
const DOMAIN_SUFFIX: [&str; 6] = ["Hotel", "Bistro", "Park", "Museum", "Cafe", "Playhouse"];
const ADJECTIVES: [&str; 16] = [
    "Golden", "Silver", "Blue", "Crimson", "Maple", "Cedar", "Harbor", "Garden", "Sunny",
    "Royal", "Ivory", "Foggy", "Amber", "Velvet", "Coral", "Winding",
];
const NOUNS: [&str; 10] = [
    "Fern", "Palm", "Crown", "Gate", "Star", "Cliff", "Brook", "Stone", "Meadow", "Anchor",
];
const LOCALITIES: [&str; 2] = ["san francisco", "cambridge"];

struct Topic {
    title: fn(&str) -> String,
    body: fn(&str) -> String,
    questions: [&'static str; 4],
}

const TOPICS: [Topic; 5] = [
    Topic {
        title: |name| format!("Is there parking at {name}?"),
        body: |name| format!("Yes, {name} offers free parking for guests."),
        questions: [
            "do they have parking",
            "is there parking available",
            "can i park my car there",
            "do they offer parking",
        ],
    },
    Topic {
        title: |name| format!("Does {name} have wifi?"),
        body: |name| format!("{name} provides complimentary wifi in all areas."),
        questions: [
            "do they have wifi",
            "is wifi included",
            "can i use the wifi there",
            "is there wireless internet",
        ],
    },
    Topic {
        title: |name| format!("Are pets allowed at {name}?"),
        body: |name| format!("Pets are welcome at {name} for a small fee."),
        questions: [
            "can i bring my dog",
            "are pets allowed",
            "do they allow pets",
            "is it pet friendly",
        ],
    },
    Topic {
        title: |name| format!("Does {name} serve breakfast?"),
        body: |name| format!("Breakfast is served at {name} from 7 to 10 every morning."),
        questions: [
            "do they serve breakfast",
            "is breakfast included",
            "can i get breakfast there",
            "when do they serve breakfast",
        ],
    },
    Topic {
        title: |name| format!("Is smoking allowed at {name}?"),
        body: |name| format!("{name} is a non smoking property with a designated outdoor area."),
        questions: [
            "is smoking allowed",
            "do they have a smoking area",
            "can i smoke there",
            "is it non smoking",
        ],
    },
];

const OPENERS: [&str; 3] = [
    "i am looking for a {domain} called {name}",
    "can you find {name} for me it is a {domain}",
    "i heard about a {domain} named {name}",
];

const API_REQUESTS: [&str; 5] = [
    "book me a table for two people",
    "i need a ride there at seven",
    "what is the phone number",
    "book it for three nights please",
    "how much does it cost per night",
];

const RESPONSE_PREFIXES: [&str; 3] = [
    "yeah let me check that for you",
    "sure let me look that up",
    "okay one moment",
];

const NOISE_WORDS: [&str; 6] = ["uh", "um", "the", "scoffer", "kind", "like"];

fn fill(template: &str, domain: &str, name: &str) -> String {
    template.replace("{domain}", domain).replace("{name}", name)
}

/// Spoken-style rendering used inside generated dialogs: lowercase, digits
/// written out by the normalizer downstream is not needed since templates
/// avoid digits in dialog text.
fn spoken(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '\'' || *c == '-')
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Perturbs one word of the text, ASR style.
fn perturb(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return text.to_string();
    }
    let idx = rng.gen_range(0..words.len());
    words[idx] = NOISE_WORDS[rng.gen_range(0..NOISE_WORDS.len())];
    words.join(" ")
}

/// Generates the toy knowledge base and dialog corpus.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    if config.domains == 0 || config.domains > DOMAIN_NAMES.len() {
        return Err(Error::config(format!(
            "domains must be in 1..={}",
            DOMAIN_NAMES.len()
        )));
    }
    if config.entities_per_domain == 0 || config.entities_per_domain > NOUNS.len() {
        return Err(Error::config(format!(
            "entities_per_domain must be in 1..={}",
            NOUNS.len()
        )));
    }
    if config.docs_per_entity == 0 || config.docs_per_entity > TOPICS.len() {
        return Err(Error::config(format!(
            "docs_per_entity must be in 1..={}",
            TOPICS.len()
        )));
    }
    if !(0.0..=1.0).contains(&config.positive_fraction) {
        return Err(Error::config("positive_fraction must be in [0, 1]"));
    }

    let mut kb = KnowledgeBase::default();
    for (d, &domain) in DOMAIN_NAMES.iter().take(config.domains).enumerate() {
        let mut entities = BTreeMap::new();
        for e in 0..config.entities_per_domain {
            let adjective = ADJECTIVES[(d * config.entities_per_domain + e) % ADJECTIVES.len()];
            let name = format!("{} {} {}", adjective, NOUNS[e], DOMAIN_SUFFIX[d]);
            let docs: BTreeMap<String, Document> = TOPICS
                .iter()
                .take(config.docs_per_entity)
                .enumerate()
                .map(|(t, topic)| {
                    (
                        t.to_string(),
                        Document {
                            title: (topic.title)(&name),
                            body: (topic.body)(&name),
                        },
                    )
                })
                .collect();
            entities.insert(
                e.to_string(),
                Entity {
                    name: Some(name),
                    locality: Some(LOCALITIES[e % LOCALITIES.len()].to_string()),
                    docs,
                },
            );
        }
        kb.domains.insert(domain.to_string(), entities);
    }

    let all_docs: Vec<DocumentKey> = kb.iter_docs().map(|(key, _)| key).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dialogs = Vec::with_capacity(config.dialogs);
    let mut sources = Vec::with_capacity(config.dialogs);
    let mut positive_counter = 0usize;

    for _ in 0..config.dialogs {
        let positive = rng.gen_bool(config.positive_fraction);
        let key = if positive {
            // Round-robin over documents so the channel model sees them all.
            let key = all_docs[positive_counter % all_docs.len()].clone();
            positive_counter += 1;
            key
        } else {
            all_docs[rng.gen_range(0..all_docs.len())].clone()
        };
        let entity = kb.entity(&key.domain, &key.entity_id).unwrap();
        let name = spoken(entity.name.as_deref().unwrap());
        let doc = kb.resolve(&key).unwrap();

        let opener = fill(OPENERS[rng.gen_range(0..OPENERS.len())], &key.domain, &name);
        let mut turns = vec![
            Turn::user(spoken(&opener)),
            Turn::agent(spoken(&format!(
                "sure {name} is a great choice what else can i help you with"
            ))),
        ];
        if rng.gen_bool(0.5) {
            turns.push(Turn::user(spoken(&format!("what area is {name} in"))));
            turns.push(Turn::agent(spoken(&format!(
                "{name} is in the {} area",
                entity.locality.as_deref().unwrap_or("city")
            ))));
        }

        let final_text = if positive {
            let topic = &TOPICS[key.doc_id.parse::<usize>().unwrap()];
            topic.questions[rng.gen_range(0..topic.questions.len())].to_string()
        } else {
            API_REQUESTS[rng.gen_range(0..API_REQUESTS.len())].to_string()
        };
        let mut final_turn = Turn::user(final_text.clone());
        let second = perturb(&final_text, &mut rng);
        final_turn.nbest = Some(vec![
            Hypothesis {
                text: final_text.clone(),
                score: -0.3,
            },
            Hypothesis {
                text: second,
                score: -1.7,
            },
        ]);
        turns.push(final_turn);

        let label = if positive {
            let prefix = RESPONSE_PREFIXES[rng.gen_range(0..RESPONSE_PREFIXES.len())];
            let response = spoken(&format!("{prefix} {}", doc.body));
            Label::positive(vec![key.clone()], response)
        } else {
            Label::negative()
        };
        sources.push((key.domain.clone(), entity.name.clone()));
        dialogs.push((Dialog::new(turns), label));
    }

    Ok(SynthData {
        kb,
        dialogs,
        sources,
    })
}
