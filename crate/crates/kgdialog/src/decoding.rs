//! Response generation engines: direct beam search, shallow fusion, density
//! ratio, noisy-channel reranking, and noisy-channel online decoding.
//!
//! All decoders work in the direct model's token-id space. Auxiliary scorers
//! (lm, ilm, channel) may have their own vocabularies; ids are translated by
//! token string, with misses mapping to `<unk>`. The lm and ilm are ungrounded
//! models, so they are conditioned on the context without the document.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentKey;
use crate::error::{Error, Result};
use crate::models::{
    prefix_logprob, ChannelScorer, ConditioningContext, SequenceScorer, Style, TokenId, Vocabulary,
    EOS,
};
use crate::numeric::weighted_add;

/// Log-linear model combination applied during decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Direct model only.
    Direct,
    /// `dm + lambda * lm`.
    ShallowFusion,
    /// `dm + lambda1 * lm - lambda2 * ilm`.
    DensityRatio,
    /// Rerank direct-model candidates by `dm + lambda1 * lm + lambda2 * channel`.
    NcRerank,
    /// Per-step rescoring of direct-model proposals by the same combination.
    NcOnline,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(FusionMode::Direct),
            "sf" => Ok(FusionMode::ShallowFusion),
            "dr" => Ok(FusionMode::DensityRatio),
            "nc-rerank" => Ok(FusionMode::NcRerank),
            "nc-online" => Ok(FusionMode::NcOnline),
            other => Err(Error::config(format!("unknown fusion mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Direct => "direct",
            FusionMode::ShallowFusion => "sf",
            FusionMode::DensityRatio => "dr",
            FusionMode::NcRerank => "nc-rerank",
            FusionMode::NcOnline => "nc-online",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Shallow fusion weight.
    pub lambda: f64,
    /// lm weight (density ratio and noisy channel).
    pub lambda1: f64,
    /// ilm weight (density ratio) or channel weight (noisy channel).
    pub lambda2: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig::direct()
    }
}

impl FusionConfig {
    pub fn direct() -> Self {
        FusionConfig {
            mode: FusionMode::Direct,
            lambda: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("lambda", self.lambda),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !value.is_finite() {
                return Err(Error::config(format!("{name} must be finite, got {value}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub beam_size: usize,
    /// Continuations per hypothesis (online decoding) or candidate count
    /// (reranking).
    pub proposal_k: usize,
    pub max_len: usize,
    pub length_normalize: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam_size: 4,
            proposal_k: 4,
            max_len: 32,
            length_normalize: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size < 1 || self.proposal_k < 1 || self.max_len < 1 {
            return Err(Error::config(
                "beam_size, proposal_k, and max_len must all be at least 1",
            ));
        }
        Ok(())
    }
}

/// A (partial or finished) response with its per-component log-scores.
/// `dm`, `lm`, and `ilm` are sums of per-step token log-probabilities; the
/// channel component is the posterior of the current prefix (frozen at the
/// pre-`<eos>` content once the hypothesis finishes), not a per-step sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Token ids in the direct model's vocabulary.
    pub tokens: Vec<TokenId>,
    /// Whether `<eos>` was emitted (force-finished hypotheses keep `false`).
    pub finished: bool,
    pub dm: f64,
    pub lm: f64,
    pub ilm: f64,
    pub channel: f64,
    pub combined: f64,
}

impl BeamHypothesis {
    fn root(channel: f64) -> Self {
        BeamHypothesis {
            tokens: Vec::new(),
            finished: false,
            dm: 0.0,
            lm: 0.0,
            ilm: 0.0,
            channel,
            combined: 0.0,
        }
    }

    /// Recomputes the combined score from the stored components, exactly as
    /// the fusion formula states it.
    pub fn combine(&mut self, fusion: &FusionConfig) {
        self.combined = combine_scores(fusion, self.dm, self.lm, self.ilm, self.channel);
    }

    /// Response tokens without the trailing `<eos>`.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    fn sort_key(&self, length_normalize: bool) -> f64 {
        if length_normalize && !self.tokens.is_empty() {
            self.combined / self.tokens.len() as f64
        } else {
            self.combined
        }
    }
}

/// Optional auxiliary scorers for shallow fusion and density ratio.
#[derive(Clone, Copy, Default)]
pub struct AuxScorers<'a> {
    pub lm: Option<&'a dyn SequenceScorer>,
    pub ilm: Option<&'a dyn SequenceScorer>,
}

/// One auxiliary scorer with its encoded context and the id translation from
/// the direct model's vocabulary (`None` when the vocabularies coincide).
struct Lane<'a> {
    scorer: &'a dyn SequenceScorer,
    ctx: Vec<TokenId>,
    map: Option<Vec<TokenId>>,
}

impl<'a> Lane<'a> {
    fn new(
        scorer: &'a dyn SequenceScorer,
        context: &ConditioningContext,
        dm_vocab: &Vocabulary,
    ) -> Self {
        Lane {
            ctx: context.encode(scorer.vocab()),
            map: dm_vocab.translation_to(scorer.vocab()),
            scorer,
        }
    }

    fn translate(&self, tokens: &[TokenId]) -> Vec<TokenId> {
        match &self.map {
            None => tokens.to_vec(),
            Some(map) => tokens.iter().map(|&t| map[t as usize]).collect(),
        }
    }

    fn token(&self, token: TokenId) -> TokenId {
        match &self.map {
            None => token,
            Some(map) => map[token as usize],
        }
    }

    fn dist(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.scorer.logprobs_next(&self.ctx, &self.translate(prefix))
    }

    fn sequence(&self, tokens: &[TokenId]) -> f64 {
        prefix_logprob(self.scorer, &self.ctx, &self.translate(tokens))
    }
}

/// The channel model with its pool, grounding key, and id translation.
struct ChannelLane<'a> {
    channel: &'a dyn ChannelScorer,
    key: &'a DocumentKey,
    pool: &'a [DocumentKey],
    ctx: Vec<TokenId>,
    map: Option<Vec<TokenId>>,
}

impl<'a> ChannelLane<'a> {
    fn new(
        channel: &'a dyn ChannelScorer,
        key: &'a DocumentKey,
        pool: &'a [DocumentKey],
        context: &ConditioningContext,
        dm_vocab: &Vocabulary,
    ) -> Self {
        ChannelLane {
            ctx: context.encode(channel.vocab()),
            map: dm_vocab.translation_to(channel.vocab()),
            channel,
            key,
            pool,
        }
    }

    fn posterior(&self, content: &[TokenId]) -> Result<f64> {
        let translated = match &self.map {
            None => content.to_vec(),
            Some(map) => content.iter().map(|&t| map[t as usize]).collect(),
        };
        self.channel
            .log_posterior(self.key, &translated, &self.ctx, self.pool)
    }
}

/// The per-step fusion formula over component log-scores.
fn combine_scores(fusion: &FusionConfig, dm: f64, lm: f64, ilm: f64, channel: f64) -> f64 {
    match fusion.mode {
        FusionMode::Direct => dm,
        FusionMode::ShallowFusion => weighted_add(dm, fusion.lambda, lm),
        FusionMode::DensityRatio => {
            weighted_add(weighted_add(dm, fusion.lambda1, lm), -fusion.lambda2, ilm)
        }
        FusionMode::NcRerank | FusionMode::NcOnline => {
            weighted_add(weighted_add(dm, fusion.lambda1, lm), fusion.lambda2, channel)
        }
    }
}

/// A beam expansion before materialization: parent index plus one more token.
/// Token vectors are only cloned for the candidates that survive pruning.
struct Candidate {
    parent: usize,
    token: TokenId,
    dm: f64,
    lm: f64,
    ilm: f64,
    channel: f64,
    combined: f64,
}

/// Candidate order: combined score descending, ties broken lexicographically
/// on the token sequence (which matches insertion order within one parent).
fn candidate_cmp(beam: &[BeamHypothesis], a: &Candidate, b: &Candidate) -> Ordering {
    b.combined
        .partial_cmp(&a.combined)
        .unwrap()
        .then_with(|| {
            let ta = beam[a.parent].tokens.iter().chain(std::iter::once(&a.token));
            let tb = beam[b.parent].tokens.iter().chain(std::iter::once(&b.token));
            ta.cmp(tb)
        })
}

fn finalize(
    mut completed: Vec<BeamHypothesis>,
    live: Vec<BeamHypothesis>,
    config: &DecoderConfig,
) -> Result<Vec<BeamHypothesis>> {
    completed.extend(live);
    if completed.is_empty() {
        return Err(Error::model(
            "beam collapse: every continuation has zero probability",
        ));
    }
    completed.sort_by(|a, b| {
        b.sort_key(config.length_normalize)
            .partial_cmp(&a.sort_key(config.length_normalize))
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    completed.truncate(config.beam_size);
    Ok(completed)
}

/// Materializes the sorted candidates into the next beam, retiring `<eos>`
/// candidates into the completed pool.
fn prune(
    candidates: Vec<Candidate>,
    beam: &[BeamHypothesis],
    completed: &mut Vec<BeamHypothesis>,
    beam_size: usize,
) -> Vec<BeamHypothesis> {
    let mut next_beam = Vec::with_capacity(beam_size);
    for candidate in candidates.into_iter().take(beam_size) {
        let parent = &beam[candidate.parent];
        let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
        tokens.extend_from_slice(&parent.tokens);
        tokens.push(candidate.token);
        let hyp = BeamHypothesis {
            tokens,
            finished: candidate.token == EOS,
            dm: candidate.dm,
            lm: candidate.lm,
            ilm: candidate.ilm,
            channel: candidate.channel,
            combined: candidate.combined,
        };
        if hyp.finished {
            completed.push(hyp);
        } else {
            next_beam.push(hyp);
        }
    }
    next_beam
}

/// Beam search over the per-step combined log-probability, for the step-local
/// fusion modes (direct, shallow fusion, density ratio). Finished hypotheses
/// retire to a completed pool; hypotheses still alive at `max_len` are
/// force-finished. Returns the pool sorted by combined score (length-
/// normalized when configured), at most `beam_size` entries.
pub fn beam_search(
    dm: &dyn SequenceScorer,
    context: &ConditioningContext,
    config: &DecoderConfig,
    fusion: &FusionConfig,
    aux: AuxScorers,
) -> Result<Vec<BeamHypothesis>> {
    config.validate()?;
    fusion.validate()?;
    let (need_lm, need_ilm) = match fusion.mode {
        FusionMode::Direct => (false, false),
        FusionMode::ShallowFusion => (true, false),
        FusionMode::DensityRatio => (true, true),
        FusionMode::NcRerank | FusionMode::NcOnline => {
            return Err(Error::config(
                "noisy-channel modes decode via nc_rerank / nc_online_decode",
            ));
        }
    };
    if need_lm && aux.lm.is_none() {
        return Err(Error::model(format!(
            "fusion mode {} requires an lm scorer",
            fusion.mode
        )));
    }
    if need_ilm && aux.ilm.is_none() {
        return Err(Error::model(format!(
            "fusion mode {} requires an ilm scorer",
            fusion.mode
        )));
    }

    let dm_ctx = context.encode(dm.vocab());
    let ungrounded = context.without_document();
    let lm_lane = aux
        .lm
        .filter(|_| need_lm)
        .map(|lm| Lane::new(lm, &ungrounded, dm.vocab()));
    let ilm_lane = aux
        .ilm
        .filter(|_| need_ilm)
        .map(|ilm| Lane::new(ilm, &ungrounded, dm.vocab()));

    let vocab_size = dm.vocab().len() as TokenId;
    let mut beam = vec![BeamHypothesis::root(0.0)];
    let mut completed: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..config.max_len {
        if beam.is_empty() {
            break;
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        for (parent, hyp) in beam.iter().enumerate() {
            let dm_dist = dm.logprobs_next(&dm_ctx, &hyp.tokens);
            let lm_dist = lm_lane.as_ref().map(|lane| lane.dist(&hyp.tokens));
            let ilm_dist = ilm_lane.as_ref().map(|lane| lane.dist(&hyp.tokens));
            for token in 0..vocab_size {
                let dm_score = hyp.dm + dm_dist[token as usize];
                let mut lm_score = hyp.lm;
                if let (Some(lane), Some(dist)) = (&lm_lane, &lm_dist) {
                    lm_score += dist[lane.token(token) as usize];
                }
                let mut ilm_score = hyp.ilm;
                if let (Some(lane), Some(dist)) = (&ilm_lane, &ilm_dist) {
                    ilm_score += dist[lane.token(token) as usize];
                }
                let combined = combine_scores(fusion, dm_score, lm_score, ilm_score, 0.0);
                if !combined.is_finite() {
                    continue;
                }
                candidates.push(Candidate {
                    parent,
                    token,
                    dm: dm_score,
                    lm: lm_score,
                    ilm: ilm_score,
                    channel: 0.0,
                    combined,
                });
            }
        }
        candidates.sort_by(|a, b| candidate_cmp(&beam, a, b));
        beam = prune(candidates, &beam, &mut completed, config.beam_size);
    }
    finalize(completed, beam, config)
}

/// Reranks complete direct-model candidates by the noisy-channel objective
/// `dm + lambda2 * channel + lambda1 * lm`, recomputing the lm and channel
/// components from the scorers. The first candidate achieving the maximum
/// wins (stable argmax).
#[allow(clippy::too_many_arguments)]
pub fn nc_rerank(
    candidates: &[BeamHypothesis],
    context: &ConditioningContext,
    doc_key: &DocumentKey,
    lm: &dyn SequenceScorer,
    channel: &dyn ChannelScorer,
    lambda1: f64,
    lambda2: f64,
    pool: &[DocumentKey],
    dm_vocab: &Vocabulary,
) -> Result<BeamHypothesis> {
    if candidates.is_empty() {
        return Err(Error::data("no candidates to rerank"));
    }
    let fusion = FusionConfig {
        mode: FusionMode::NcRerank,
        lambda: 0.0,
        lambda1,
        lambda2,
    };
    let ungrounded = context.without_document();
    let lm_lane = Lane::new(lm, &ungrounded, dm_vocab);
    let channel_lane = ChannelLane::new(channel, doc_key, pool, context, dm_vocab);

    let mut best: Option<BeamHypothesis> = None;
    for candidate in candidates {
        let mut scored = candidate.clone();
        scored.lm = lm_lane.sequence(&scored.tokens);
        scored.channel = channel_lane.posterior(scored.content())?;
        scored.combine(&fusion);
        if best.as_ref().is_none_or(|b| scored.combined > b.combined) {
            best = Some(scored);
        }
    }
    Ok(best.unwrap())
}

/// Noisy-channel online decoding: at each step every live hypothesis proposes
/// its top `proposal_k` continuations ranked by the direct model alone; the
/// pooled expansions are rescored with
/// `dm + lambda1 * lm + lambda2 * channel(prefix)` and the best `beam_size`
/// survive. `<eos>` handling and termination follow [`beam_search`]; the
/// channel posterior of a finished hypothesis stays frozen at its final
/// content prefix.
#[allow(clippy::too_many_arguments)]
pub fn nc_online_decode(
    dm: &dyn SequenceScorer,
    lm: &dyn SequenceScorer,
    channel: &dyn ChannelScorer,
    context: &ConditioningContext,
    doc_key: &DocumentKey,
    pool: &[DocumentKey],
    config: &DecoderConfig,
    lambda1: f64,
    lambda2: f64,
) -> Result<Vec<BeamHypothesis>> {
    config.validate()?;
    let fusion = FusionConfig {
        mode: FusionMode::NcOnline,
        lambda: 0.0,
        lambda1,
        lambda2,
    };
    let dm_ctx = context.encode(dm.vocab());
    let ungrounded = context.without_document();
    let lm_lane = Lane::new(lm, &ungrounded, dm.vocab());
    let channel_lane = ChannelLane::new(channel, doc_key, pool, context, dm.vocab());

    let mut beam = vec![BeamHypothesis::root(channel_lane.posterior(&[])?)];
    let mut completed: Vec<BeamHypothesis> = Vec::new();

    for _ in 0..config.max_len {
        if beam.is_empty() {
            break;
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        for (parent, hyp) in beam.iter().enumerate() {
            let dm_dist = dm.logprobs_next(&dm_ctx, &hyp.tokens);
            let lm_dist = lm_lane.dist(&hyp.tokens);

            // Proposals: top-k tokens under the direct model alone.
            let mut order: Vec<TokenId> = (0..dm_dist.len() as TokenId)
                .filter(|&t| dm_dist[t as usize].is_finite())
                .collect();
            order.sort_by(|&a, &b| {
                dm_dist[b as usize]
                    .partial_cmp(&dm_dist[a as usize])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.truncate(config.proposal_k);

            let mut prefix = hyp.tokens.clone();
            for token in order {
                let dm_score = hyp.dm + dm_dist[token as usize];
                let lm_score = hyp.lm + lm_dist[lm_lane.token(token) as usize];
                let channel_score = if token == EOS {
                    hyp.channel
                } else {
                    prefix.push(token);
                    let posterior = channel_lane.posterior(&prefix)?;
                    prefix.pop();
                    posterior
                };
                let combined = combine_scores(&fusion, dm_score, lm_score, 0.0, channel_score);
                if !combined.is_finite() {
                    continue;
                }
                candidates.push(Candidate {
                    parent,
                    token,
                    dm: dm_score,
                    lm: lm_score,
                    ilm: 0.0,
                    channel: channel_score,
                    combined,
                });
            }
        }
        candidates.sort_by(|a, b| candidate_cmp(&beam, a, b));
        beam = prune(candidates, &beam, &mut completed, config.beam_size);
    }
    finalize(completed, beam, config)
}

/// Returns the context with the style token set as its first token; applying
/// twice with the same style yields a single leading token.
pub fn make_style_context(context: &ConditioningContext, style: Style) -> ConditioningContext {
    context.clone().with_style(style)
}

/// Scorer bundle for a generation stage; which members are required depends
/// on the fusion mode.
#[derive(Clone, Copy, Default)]
pub struct GenerationScorers<'a> {
    pub dm: Option<&'a dyn SequenceScorer>,
    pub lm: Option<&'a dyn SequenceScorer>,
    pub ilm: Option<&'a dyn SequenceScorer>,
    pub channel: Option<&'a dyn ChannelScorer>,
}

impl<'a> GenerationScorers<'a> {
    fn dm(&self) -> Result<&'a dyn SequenceScorer> {
        self.dm.ok_or_else(|| Error::model("missing direct model"))
    }

    fn lm(&self) -> Result<&'a dyn SequenceScorer> {
        self.lm.ok_or_else(|| Error::model("missing lm scorer"))
    }

    fn channel(&self) -> Result<&'a dyn ChannelScorer> {
        self.channel
            .ok_or_else(|| Error::model("missing channel model"))
    }
}

/// Dispatches to the decoder for the configured fusion mode. The noisy-channel
/// modes need `doc_key` and a candidate `pool`; reranking first decodes
/// `proposal_k` candidates from the direct model (widening the beam to at
/// least `proposal_k`) and then applies [`nc_rerank`].
pub fn decode_response(
    scorers: GenerationScorers,
    context: &ConditioningContext,
    doc_key: Option<&DocumentKey>,
    pool: &[DocumentKey],
    config: &DecoderConfig,
    fusion: &FusionConfig,
) -> Result<Vec<BeamHypothesis>> {
    fusion.validate()?;
    match fusion.mode {
        FusionMode::Direct | FusionMode::ShallowFusion | FusionMode::DensityRatio => beam_search(
            scorers.dm()?,
            context,
            config,
            fusion,
            AuxScorers {
                lm: scorers.lm,
                ilm: scorers.ilm,
            },
        ),
        FusionMode::NcRerank => {
            let dm = scorers.dm()?;
            let key =
                doc_key.ok_or_else(|| Error::config("noisy channel needs a document key"))?;
            let proposal_config = DecoderConfig {
                beam_size: config.beam_size.max(config.proposal_k),
                ..*config
            };
            let mut candidates = beam_search(
                dm,
                context,
                &proposal_config,
                &FusionConfig::direct(),
                AuxScorers::default(),
            )?;
            candidates.truncate(config.proposal_k);
            let best = nc_rerank(
                &candidates,
                context,
                key,
                scorers.lm()?,
                scorers.channel()?,
                fusion.lambda1,
                fusion.lambda2,
                pool,
                dm.vocab(),
            )?;
            Ok(vec![best])
        }
        FusionMode::NcOnline => {
            let key =
                doc_key.ok_or_else(|| Error::config("noisy channel needs a document key"))?;
            nc_online_decode(
                scorers.dm()?,
                scorers.lm()?,
                scorers.channel()?,
                context,
                key,
                pool,
                config,
                fusion.lambda1,
                fusion.lambda2,
            )
        }
    }
}
