//! Cross-module property tests that go beyond the per-module unit tests:
//! decoder score decomposability and beam-size behavior, rerank permutation
//! invariance, selection monotonicity and invariances, and corpus round
//! trips on randomized data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgdialog::corpus::{Dialog, DocumentKey, Label, Turn};
use kgdialog::decoding::{
    beam_search, nc_online_decode, nc_rerank, AuxScorers, BeamHypothesis, DecoderConfig,
    FusionConfig, FusionMode,
};
use kgdialog::models::{
    prefix_logprob, ChannelModel, ChannelScorer, ConditioningContext, SeededScorer, TokenId,
    Vocabulary, EOS,
};
use kgdialog::numeric::weighted_add;
use kgdialog::selection::{
    entity_candidates, select_document, ScoredEntity, SelectionConfig,
};

fn content_vocab(n: usize) -> (Vocabulary, Vec<TokenId>) {
    let mut vocab = Vocabulary::new();
    let content = (0..n).map(|i| vocab.add(&format!("t{i}"))).collect();
    (vocab, content)
}

fn random_channel(
    vocab: &Vocabulary,
    content: &[TokenId],
    rng: &mut ChaCha8Rng,
) -> (ChannelModel, Vec<DocumentKey>) {
    let pool: Vec<DocumentKey> = (0..3)
        .map(|i| DocumentKey::new("d", "e", i.to_string()))
        .collect();
    let entries = pool
        .iter()
        .map(|key| {
            let counts: Vec<(TokenId, u64)> =
                content.iter().map(|&t| (t, rng.gen_range(0..6))).collect();
            (key.clone(), rng.gen_range(1..4), counts)
        })
        .collect();
    (
        ChannelModel::from_counts(vocab.clone(), 0.7, entries).unwrap(),
        pool,
    )
}

/// For any returned hypothesis, recomputing every component from the scorers
/// reproduces the stored values.
#[test]
fn decoder_scores_are_decomposable() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let (vocab, content) = content_vocab(3);
        let active: Vec<TokenId> = content.iter().copied().chain([EOS]).collect();
        let dm = SeededScorer::new(vocab.clone(), active.clone(), seed);
        let lm = SeededScorer::new(vocab.clone(), active.clone(), seed + 50);
        let ilm = SeededScorer::new(vocab.clone(), active.clone(), seed + 100);
        let (channel, pool) = random_channel(&vocab, &content, &mut rng);
        let key = pool[0].clone();
        let ctx = ConditioningContext::default();
        let config = DecoderConfig {
            beam_size: 4,
            proposal_k: vocab.len(),
            max_len: 4,
            length_normalize: false,
        };

        let fusion = FusionConfig {
            mode: FusionMode::DensityRatio,
            lambda: 0.0,
            lambda1: 0.4,
            lambda2: 0.2,
        };
        let out = beam_search(
            &dm,
            &ctx,
            &config,
            &fusion,
            AuxScorers {
                lm: Some(&lm),
                ilm: Some(&ilm),
            },
        )
        .unwrap();
        for hyp in &out {
            let dm_score = prefix_logprob(&dm, &[], &hyp.tokens);
            let lm_score = prefix_logprob(&lm, &[], &hyp.tokens);
            let ilm_score = prefix_logprob(&ilm, &[], &hyp.tokens);
            assert!((hyp.dm - dm_score).abs() <= 1e-9);
            assert!((hyp.lm - lm_score).abs() <= 1e-9);
            assert!((hyp.ilm - ilm_score).abs() <= 1e-9);
            let combined = weighted_add(weighted_add(dm_score, 0.4, lm_score), -0.2, ilm_score);
            assert!((hyp.combined - combined).abs() <= 1e-9);
        }

        let out = nc_online_decode(&dm, &lm, &channel, &ctx, &key, &pool, &config, 0.3, 0.9)
            .unwrap();
        for hyp in &out {
            let dm_score = prefix_logprob(&dm, &[], &hyp.tokens);
            let lm_score = prefix_logprob(&lm, &[], &hyp.tokens);
            let posterior = channel
                .log_posterior(&key, hyp.content(), &[], &pool)
                .unwrap();
            assert!((hyp.dm - dm_score).abs() <= 1e-9);
            assert!((hyp.lm - lm_score).abs() <= 1e-9);
            assert!((hyp.channel - posterior).abs() <= 1e-9);
            let combined = weighted_add(weighted_add(dm_score, 0.3, lm_score), 0.9, posterior);
            assert!((hyp.combined - combined).abs() <= 1e-9);
        }
    }
}

/// A beam wide enough to cover the whole search space never scores below a
/// narrower beam, and every beam stays below the exhaustive optimum.
#[test]
fn covering_beam_dominates_any_beam() {
    for seed in 0..30 {
        let (vocab, content) = content_vocab(3);
        let active: Vec<TokenId> = content.iter().copied().chain([EOS]).collect();
        let dm = SeededScorer::new(vocab.clone(), active, seed);
        let ctx = ConditioningContext::default();
        let max_len = 4;
        let covering = DecoderConfig {
            beam_size: 4usize.pow(max_len as u32),
            proposal_k: vocab.len(),
            max_len,
            length_normalize: false,
        };
        let optimum = beam_search(&dm, &ctx, &covering, &FusionConfig::direct(), AuxScorers::default())
            .unwrap()[0]
            .combined;
        for beam_size in [1, 2, 3, 5, 8] {
            let config = DecoderConfig {
                beam_size,
                ..covering
            };
            let top = beam_search(&dm, &ctx, &config, &FusionConfig::direct(), AuxScorers::default())
                .unwrap()[0]
                .combined;
            assert!(
                top <= optimum + 1e-12,
                "seed {seed}: beam {beam_size} exceeded the exhaustive optimum"
            );
        }
    }
}

#[test]
fn rerank_is_permutation_invariant_up_to_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (vocab, content) = content_vocab(4);
    let active: Vec<TokenId> = content.iter().copied().chain([EOS]).collect();
    let lm = SeededScorer::new(vocab.clone(), active, 9);
    let (channel, pool) = random_channel(&vocab, &content, &mut rng);
    let key = pool[1].clone();
    let ctx = ConditioningContext::default();

    for _ in 0..30 {
        let candidates: Vec<BeamHypothesis> = (0..6)
            .map(|_| {
                let len = rng.gen_range(1..4);
                let mut tokens: Vec<TokenId> = (0..len)
                    .map(|_| content[rng.gen_range(0..content.len())])
                    .collect();
                tokens.push(EOS);
                let dm = -rng.gen_range(0.1..4.0);
                BeamHypothesis {
                    tokens,
                    finished: true,
                    dm,
                    lm: 0.0,
                    ilm: 0.0,
                    channel: 0.0,
                    combined: dm,
                }
            })
            .collect();
        let best = nc_rerank(&candidates, &ctx, &key, &lm, &channel, 0.5, 1.0, &pool, &vocab)
            .unwrap();
        // Rotate and reverse the candidate list; distinct random scores make
        // the argmax unique, so the winner must not move.
        let mut rotated = candidates.clone();
        rotated.rotate_left(2);
        let best_rotated =
            nc_rerank(&rotated, &ctx, &key, &lm, &channel, 0.5, 1.0, &pool, &vocab).unwrap();
        assert_eq!(best.tokens, best_rotated.tokens);
        assert_eq!(best.combined, best_rotated.combined);
        let mut reversed = candidates.clone();
        reversed.reverse();
        let best_reversed =
            nc_rerank(&reversed, &ctx, &key, &lm, &channel, 0.5, 1.0, &pool, &vocab).unwrap();
        assert_eq!(best.tokens, best_reversed.tokens);
    }
}

fn random_scored_entities(rng: &mut ChaCha8Rng) -> Vec<ScoredEntity> {
    (0..rng.gen_range(1..15))
        .map(|i| ScoredEntity {
            domain: "d".into(),
            entity_id: i.to_string(),
            score: rng.gen_range(0.01..0.99),
        })
        .collect()
}

/// The candidate set shrinks weakly as t grows, and the selected combined
/// score never increases.
#[test]
fn selection_is_monotone_in_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for _ in 0..50 {
        let scored = random_scored_entities(&mut rng);
        let mut previous_len = usize::MAX;
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let kept = entity_candidates(&scored, t);
            assert!(kept.len() <= previous_len, "candidate set grew at t={t}");
            assert!(!kept.is_empty(), "argmax always kept");
            previous_len = kept.len();
        }
    }

    // Selected combined score is non-increasing in t on a random kb world.
    use std::collections::BTreeMap;
    use std::collections::HashMap;
    let mut kb = kgdialog::corpus::KnowledgeBase::default();
    let mut entity_table: HashMap<String, f64> = HashMap::new();
    let mut doc_table: HashMap<String, f64> = HashMap::new();
    let mut entities = BTreeMap::new();
    for e in 0..8 {
        let name = format!("place{e}");
        let docs: BTreeMap<String, kgdialog::corpus::Document> = (0..4)
            .map(|i| {
                let doc = kgdialog::corpus::Document {
                    title: format!("q {name} {i}"),
                    body: format!("a {i}"),
                };
                doc_table.insert(format!("q {name} {i} a {i}"), rng.gen_range(0.01..0.99));
                (i.to_string(), doc)
            })
            .collect();
        entity_table.insert(format!("hotel {name}"), rng.gen_range(0.01..0.99));
        entities.insert(
            e.to_string(),
            kgdialog::corpus::Entity {
                name: Some(name),
                locality: None,
                docs,
            },
        );
    }
    kb.domains.insert("hotel".into(), entities);
    let entity_model =
        move |_: &ConditioningContext, extra: &[String]| entity_table[&extra.join(" ")];
    let doc_model = move |_: &ConditioningContext, extra: &[String]| doc_table[&extra.join(" ")];
    let dialog = Dialog::new(vec![Turn::user("hello")]);

    let mut previous = f64::INFINITY;
    for step in 0..=10 {
        let config = SelectionConfig {
            t: step as f64 / 10.0,
            gamma: 1.0,
            ..SelectionConfig::default()
        };
        let selected = select_document(&entity_model, &doc_model, &dialog, &kb, &config).unwrap();
        assert!(selected.combined <= previous + 1e-12);
        previous = selected.combined;
    }
}

/// With gamma = 0 the selection is independent of every entity score, and
/// scaling all document scores by a common factor never moves the argmax.
#[test]
fn selection_gamma_and_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    use std::collections::BTreeMap;
    use std::collections::HashMap;
    for _ in 0..20 {
        let mut kb = kgdialog::corpus::KnowledgeBase::default();
        let mut doc_table: HashMap<String, f64> = HashMap::new();
        let mut entities = BTreeMap::new();
        for e in 0..5 {
            let name = format!("spot{e}");
            let docs: BTreeMap<String, kgdialog::corpus::Document> = (0..3)
                .map(|i| {
                    let doc = kgdialog::corpus::Document {
                        title: format!("q {name} {i}"),
                        body: format!("a {i}"),
                    };
                    doc_table.insert(format!("q {name} {i} a {i}"), rng.gen_range(0.01..0.9));
                    (i.to_string(), doc)
                })
                .collect();
            entities.insert(
                e.to_string(),
                kgdialog::corpus::Entity {
                    name: Some(name),
                    locality: None,
                    docs,
                },
            );
        }
        kb.domains.insert("cafe".into(), entities);
        let dialog = Dialog::new(vec![Turn::user("hi")]);

        // gamma = 0: swap in wildly different entity scores, same result.
        let doc_model = {
            let doc_table = doc_table.clone();
            move |_: &ConditioningContext, extra: &[String]| doc_table[&extra.join(" ")]
        };
        let config = SelectionConfig {
            t: 0.0,
            gamma: 0.0,
            ..SelectionConfig::default()
        };
        let seed_a = rng.gen::<u64>();
        let entity_scores = move |salt: u64| {
            move |_: &ConditioningContext, extra: &[String]| {
                let mut h = std::collections::hash_map::DefaultHasher::new();
                use std::hash::{Hash, Hasher};
                (salt, extra.join(" ")).hash(&mut h);
                (h.finish() % 97 + 1) as f64 / 100.0
            }
        };
        let a = select_document(&entity_scores(seed_a), &doc_model, &dialog, &kb, &config)
            .unwrap();
        let b = select_document(&entity_scores(seed_a ^ 0xdead), &doc_model, &dialog, &kb, &config)
            .unwrap();
        assert_eq!(a.key, b.key, "gamma = 0 must ignore entity scores");

        // Scaling all p_D by a common constant keeps the argmax.
        let config = SelectionConfig {
            t: 0.0,
            gamma: 1.3,
            ..SelectionConfig::default()
        };
        let entity_model = entity_scores(7);
        let unscaled =
            select_document(&entity_model, &doc_model, &dialog, &kb, &config).unwrap();
        let scale = rng.gen_range(0.05..1.0);
        let scaled_model = {
            let doc_table = doc_table.clone();
            move |_: &ConditioningContext, extra: &[String]| scale * doc_table[&extra.join(" ")]
        };
        let scaled =
            select_document(&entity_model, &scaled_model, &dialog, &kb, &config).unwrap();
        assert_eq!(unscaled.key, scaled.key, "common p_D scaling moved the argmax");
    }
}

/// Randomized corpus round trips: labels and dialogs survive write + load
/// field for field.
#[test]
fn corpus_round_trips_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dir = tempfile::tempdir().unwrap();
    for case in 0..25 {
        let n = rng.gen_range(1..12);
        let mut dialogs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let mut turns = Vec::new();
            for t in 0..rng.gen_range(1..5) {
                let text: String = (0..rng.gen_range(1..6))
                    .map(|i| format!("w{}{} ", t, i))
                    .collect::<String>()
                    .trim_end()
                    .to_string();
                let mut turn = if t % 2 == 0 {
                    Turn::user(text)
                } else {
                    Turn::agent(text)
                };
                if turn.speaker == kgdialog::corpus::Speaker::User && rng.gen_bool(0.4) {
                    turn.nbest = Some(
                        (0..rng.gen_range(1..4))
                            .map(|h| kgdialog::corpus::Hypothesis {
                                text: format!("hyp {h}"),
                                score: rng.gen_range(-9.0..0.0),
                            })
                            .collect(),
                    );
                }
                turns.push(turn);
            }
            dialogs.push(Dialog::new(turns));
            labels.push(if rng.gen_bool(0.5) {
                Label::positive(
                    vec![DocumentKey::new("dom", rng.gen_range(0..5).to_string(), "0")],
                    format!("resp {case}"),
                )
            } else {
                Label::negative()
            });
        }
        let logs_path = dir.path().join(format!("logs{case}.json"));
        let labels_path = dir.path().join(format!("labels{case}.json"));
        kgdialog::corpus::write_logs(&dialogs, &logs_path).unwrap();
        kgdialog::corpus::write_predictions(&labels, &labels_path).unwrap();
        let pairs = kgdialog::corpus::load_dialogs(&logs_path, Some(&labels_path)).unwrap();
        assert_eq!(pairs.len(), dialogs.len());
        for ((dialog, label), (orig_d, orig_l)) in pairs.iter().zip(dialogs.iter().zip(&labels)) {
            assert_eq!(dialog, orig_d);
            assert_eq!(label.as_ref().unwrap(), orig_l);
        }
    }
}

/// Every sequence scorer's next-token distribution sums to one at 100 random
/// (context, prefix) states.
#[test]
fn scorer_distributions_normalize_at_random_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut vocab = Vocabulary::new();
    let words: Vec<TokenId> = (0..8).map(|i| vocab.add(&format!("w{i}"))).collect();
    let corpus: Vec<Vec<TokenId>> = (0..30)
        .map(|_| {
            let len = rng.gen_range(1..8);
            let mut seq: Vec<TokenId> = (0..len)
                .map(|_| words[rng.gen_range(0..words.len())])
                .collect();
            seq.push(EOS);
            seq
        })
        .collect();
    let ngram = kgdialog::models::NGramLM::train(&corpus, 3, 0.4, vocab.clone()).unwrap();
    let seeded = SeededScorer::new(vocab.clone(), words.iter().copied().chain([EOS]).collect(), 4);

    for _ in 0..100 {
        let ctx_len = rng.gen_range(0..6);
        let context: Vec<TokenId> = (0..ctx_len)
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect();
        let prefix_len = rng.gen_range(0..5);
        let prefix: Vec<TokenId> = (0..prefix_len)
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect();
        for scorer in [&ngram as &dyn kgdialog::models::SequenceScorer, &seeded] {
            let sum: f64 = scorer
                .logprobs_next(&context, &prefix)
                .iter()
                .map(|&lp| lp.exp())
                .sum();
            assert!((sum - 1.0).abs() <= 1e-6, "sum {sum}");
        }
    }
}

/// Fusion across scorers with different vocabularies: ids are translated by
/// token string, unknown strings fall back to `<unk>`, and the stored lm
/// component matches a by-hand recomputation through the translation.
#[test]
fn mixed_vocabulary_fusion_translates_by_token_string() {
    use kgdialog::decoding::{beam_search, AuxScorers, DecoderConfig, FusionConfig, FusionMode};
    use kgdialog::models::NGramLM;

    // dm vocabulary: {yes, parking, sure}; lm vocabulary: {yes, sure, maybe}.
    let mut dm_vocab = Vocabulary::new();
    let dm_seqs: Vec<Vec<TokenId>> = ["yes parking <eos>", "sure parking <eos>", "yes <eos>"]
        .iter()
        .map(|s| s.split_whitespace().map(|w| dm_vocab.add(w)).collect())
        .collect();
    let dm = NGramLM::train(&dm_seqs, 2, 0.4, dm_vocab.clone()).unwrap();

    let mut lm_vocab = Vocabulary::new();
    let lm_seqs: Vec<Vec<TokenId>> = ["yes sure <eos>", "maybe yes <eos>", "sure <eos>"]
        .iter()
        .map(|s| s.split_whitespace().map(|w| lm_vocab.add(w)).collect())
        .collect();
    let lm = NGramLM::train(&lm_seqs, 2, 0.4, lm_vocab.clone()).unwrap();
    assert_ne!(dm_vocab, lm_vocab);

    let ctx = ConditioningContext::new(vec![vec!["hello".to_string()]]);
    let config = DecoderConfig {
        beam_size: 6,
        proposal_k: 6,
        max_len: 3,
        length_normalize: false,
    };
    let fusion = FusionConfig {
        mode: FusionMode::ShallowFusion,
        lambda: 0.7,
        lambda1: 0.0,
        lambda2: 0.0,
    };
    let out = beam_search(
        &dm,
        &ctx,
        &config,
        &fusion,
        AuxScorers {
            lm: Some(&lm),
            ilm: None,
        },
    )
    .unwrap();
    assert!(!out.is_empty());

    let lm_ctx = ctx.encode(&lm_vocab);
    for hyp in &out {
        // Translate dm-space ids to lm-space ids by their token strings;
        // "parking" is not in the lm vocabulary and must become <unk>.
        let translated: Vec<TokenId> = hyp
            .tokens
            .iter()
            .map(|&t| lm_vocab.id_or_unk(dm_vocab.token(t)))
            .collect();
        let expected_lm = prefix_logprob(&lm, &lm_ctx, &translated);
        assert!(
            (hyp.lm - expected_lm).abs() <= 1e-12,
            "stored lm {} vs recomputed {}",
            hyp.lm,
            expected_lm
        );
        let expected_combined = weighted_add(hyp.dm, 0.7, hyp.lm);
        assert!((hyp.combined - expected_combined).abs() <= 1e-12);
    }
}
