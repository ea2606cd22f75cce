//! Label-synchronous beam search combining attention, CTC prefix and
//! language-model scores.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::ctc::{CtcPrefixScorer, CtcPrefixState};
use crate::error::{Error, Result};
use crate::model::{AsrModel, DecoderState, EncodedUtterance, LanguageModel, LmState};
use crate::tokenizer::{BLANK_ID, SOS_EOS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    /// CTC weight.
    pub alpha: f64,
    /// Language-model weight.
    pub beta: f64,
    /// Added once per emitted non-eos unit.
    pub penalty: f64,
    /// Cap on emitted units; defaults to the encoder frame count.
    pub max_len: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: 10,
            alpha: 0.3,
            beta: 0.3,
            penalty: 0.5,
            max_len: None,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam < 1 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Accumulated component log-scores of a hypothesis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub att: f64,
    /// CTC prefix log-probability; the full-sequence value once finished.
    pub ctc: f64,
    pub lm: f64,
    /// Number of emitted units, eos excluded.
    pub length: usize,
}

impl ComponentScores {
    pub fn combined(&self, cfg: &BeamConfig) -> f64 {
        self.att + weighted(cfg.alpha, self.ctc) + weighted(cfg.beta, self.lm) + cfg.penalty * self.length as f64
    }
}

/// `weight * score`, where a zero weight switches the term off even for an
/// impossible (`-inf`) score.
pub fn weighted(weight: f64, score: f64) -> f64 {
    if weight == 0.0 {
        0.0
    } else {
        weight * score
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Emitted units after sos; eos is implied by `finished`.
    pub units: Vec<usize>,
    pub score: f64,
    pub scores: ComponentScores,
    pub ctc_state: CtcPrefixState,
    pub lm_state: Option<LmState>,
    pub dec_state: DecoderState,
    pub finished: bool,
}

impl Hypothesis {
    fn last_unit(&self) -> usize {
        self.units.last().copied().unwrap_or(SOS_EOS_ID)
    }
}

/// Score descending, then unit sequence ascending.
pub fn hypothesis_order(a_score: f64, a_units: &[usize], b_score: f64, b_units: &[usize]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_units.cmp(b_units))
}

struct Candidate {
    parent: usize,
    unit: usize,
    score: f64,
    scores: ComponentScores,
    ctc_state: CtcPrefixState,
    key: Vec<usize>,
}

/// Runs the search and returns finished hypotheses best first, at most
/// `cfg.beam` of them.
pub fn beam_search(
    model: &AsrModel,
    enc: &EncodedUtterance,
    ctx: Option<&[f64]>,
    lm: Option<(&LanguageModel, Option<&[f64]>)>,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    if let Some((l, _)) = lm {
        if l.vocab_size() != model.vocab_size() {
            return Err(Error::Incompatible(format!(
                "language model has {} units, recognizer {}",
                l.vocab_size(),
                model.vocab_size()
            )));
        }
    }
    let ps = &model.ps;
    let frames = enc.states.len();
    let vocab = model.vocab_size();
    let max_units = cfg.max_len.unwrap_or(frames);
    let scorer = CtcPrefixScorer::new(&enc.ctc_log_post, BLANK_ID, SOS_EOS_ID);
    let mut live = vec![Hypothesis {
        units: Vec::new(),
        score: 0.0,
        scores: ComponentScores::default(),
        ctc_state: scorer.initial(),
        lm_state: lm.map(|(l, _)| l.initial_state()),
        dec_state: model.decoder.initial_state(frames),
        finished: false,
    }];
    let mut ended: Vec<Hypothesis> = Vec::new();

    for step in 0..=max_units {
        if live.is_empty() {
            break;
        }
        let force_eos = step == max_units;
        let mut next_dec = Vec::with_capacity(live.len());
        let mut next_lm = Vec::with_capacity(live.len());
        let mut cands: Vec<Candidate> = Vec::new();
        for (p, hyp) in live.iter().enumerate() {
            let (att_lp, dstate) = model
                .decoder
                .step(ps, &enc.states, &enc.keys, hyp.last_unit(), &hyp.dec_state, ctx);
            let (lm_lp, lstate) = match (lm, &hyp.lm_state) {
                (Some((l, lctx)), Some(st)) => {
                    let (lp, ns) = l.lm_step(hyp.last_unit(), st, lctx)?;
                    (Some(lp), Some(ns))
                }
                _ => (None, None),
            };
            let units: Box<dyn Iterator<Item = usize>> = if force_eos {
                Box::new(std::iter::once(SOS_EOS_ID))
            } else {
                Box::new((0..vocab).filter(|&u| u != BLANK_ID))
            };
            for u in units {
                let (ctc_state, ctc_inc) = scorer.extend(&hyp.ctc_state, u)?;
                let lm_inc = lm_lp.as_ref().map_or(0.0, |lp| lp[u]);
                let scores = ComponentScores {
                    att: hyp.scores.att + att_lp[u],
                    ctc: hyp.scores.ctc + ctc_inc,
                    lm: hyp.scores.lm + lm_inc,
                    length: hyp.scores.length + usize::from(u != SOS_EOS_ID),
                };
                let score = hyp.score
                    + att_lp[u]
                    + weighted(cfg.alpha, ctc_inc)
                    + weighted(cfg.beta, lm_inc)
                    + if u != SOS_EOS_ID { cfg.penalty } else { 0.0 };
                let mut key = hyp.units.clone();
                key.push(u);
                cands.push(Candidate {
                    parent: p,
                    unit: u,
                    score,
                    scores,
                    ctc_state,
                    key,
                });
            }
            next_dec.push(dstate);
            next_lm.push(lstate);
        }
        if cands.iter().any(|c| c.score.is_finite()) {
            cands.retain(|c| c.score.is_finite());
        }
        cands.sort_by(|a, b| hypothesis_order(a.score, &a.key, b.score, &b.key));
        cands.truncate(cfg.beam);
        let mut new_live = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.parent];
            let finished = c.unit == SOS_EOS_ID;
            let mut units = parent.units.clone();
            if !finished {
                units.push(c.unit);
            }
            let hyp = Hypothesis {
                units,
                score: c.score,
                scores: c.scores,
                ctc_state: c.ctc_state,
                lm_state: next_lm[c.parent].clone(),
                dec_state: next_dec[c.parent].clone(),
                finished,
            };
            if finished {
                ended.push(hyp);
            } else {
                new_live.push(hyp);
            }
        }
        live = new_live;
    }
    ended.sort_by(|a, b| hypothesis_order(a.score, &a.units, b.score, &b.units));
    ended.truncate(cfg.beam);
    Ok(ended)
}
