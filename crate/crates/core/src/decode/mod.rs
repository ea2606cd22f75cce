//! Conversation-sequential decoding, WER scoring, perplexity and reports.

pub mod beam;
pub mod report;
pub mod wer;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AsrModel, ContextSource, LanguageModel};
use crate::tokenizer::Tokenizer;
use crate::train::PreparedConversation;

pub use beam::{beam_search, BeamConfig, ComponentScores, Hypothesis};
pub use report::{emit_report, PplRow, WerRow};
pub use wer::{wer, WerStats};

/// Recognizer, optional language model and search settings.
#[derive(Debug, Clone, Copy)]
pub struct Recognizer<'a> {
    pub model: &'a AsrModel,
    pub lm: Option<&'a LanguageModel>,
    pub tokenizer: &'a Tokenizer,
    pub beam: BeamConfig,
}

impl Recognizer<'_> {
    /// n-best hypotheses for one utterance given the preceding sentence's words.
    pub fn recognize(&self, features: &[Vec<f64>], prev_words: Option<&[String]>) -> Result<Vec<Hypothesis>> {
        let enc = self.model.encode(features)?;
        let ctx = self.model.context_for(prev_words);
        let lm_ctx = self.lm.and_then(|l| l.context_for(prev_words));
        let lm = self
            .lm
            .filter(|_| self.beam.beta > 0.0)
            .map(|l| (l, lm_ctx.as_ref().map(|c| c.vector.as_slice())));
        beam_search(
            self.model,
            &enc,
            ctx.as_ref().map(|c| c.vector.as_slice()),
            lm,
            &self.beam,
        )
    }

    pub fn words(&self, hyp: &Hypothesis) -> Result<Vec<String>> {
        self.tokenizer.decode(&hyp.units)
    }
}

#[derive(Debug, Clone)]
pub struct SentenceDecode {
    pub conv_id: String,
    pub index: usize,
    /// Source of the context actually used; the first sentence is always `zero`.
    pub source: ContextSource,
    pub context_words: Option<Vec<String>>,
    pub nbest: Vec<Hypothesis>,
    pub words: Vec<String>,
    pub reference: Vec<String>,
    pub wer: WerStats,
}

/// Reference sentences that random context is drawn from.
#[derive(Debug, Clone)]
pub struct ContextPool {
    entries: Vec<(String, Vec<String>)>,
}

impl ContextPool {
    pub fn new(convs: &[PreparedConversation]) -> Self {
        ContextPool {
            entries: convs
                .iter()
                .flat_map(|c| c.sentences.iter().map(move |s| (c.conv_id.clone(), s.words.clone())))
                .collect(),
        }
    }

    /// Uniform draw among sentences of other conversations.
    pub fn sample(&self, exclude: &str, rng: &mut ChaCha8Rng) -> Option<&[String]> {
        let n = self.entries.iter().filter(|(c, _)| c != exclude).count();
        if n == 0 {
            return None;
        }
        let pick = rng.random_range(0..n);
        self.entries
            .iter()
            .filter(|(c, _)| c != exclude)
            .nth(pick)
            .map(|(_, w)| w.as_slice())
    }
}

/// Decodes the sentences of one conversation in order; sentence `k` is
/// conditioned on context chosen by `source`.
pub fn decode_conversation(
    rec: &Recognizer,
    conv: &PreparedConversation,
    source: ContextSource,
    pool: &ContextPool,
    seed: u64,
) -> Result<Vec<SentenceDecode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<SentenceDecode> = Vec::with_capacity(conv.sentences.len());
    for (k, s) in conv.sentences.iter().enumerate() {
        let context: Option<Vec<String>> = if k == 0 {
            None
        } else {
            match source {
                ContextSource::Zero => None,
                ContextSource::Oracle => Some(conv.sentences[k - 1].words.clone()),
                ContextSource::Predicted => Some(out[k - 1].words.clone()),
                ContextSource::Random => pool.sample(&conv.conv_id, &mut rng).map(<[String]>::to_vec),
            }
        };
        let nbest = rec.recognize(&s.features, context.as_deref())?;
        let words = match nbest.first() {
            Some(h) => rec.words(h)?,
            None => Vec::new(),
        };
        let wer = wer(&s.words, &words);
        out.push(SentenceDecode {
            conv_id: conv.conv_id.clone(),
            index: s.index,
            source: if k == 0 { ContextSource::Zero } else { source },
            context_words: context,
            nbest,
            words,
            reference: s.words.clone(),
            wer,
        });
    }
    Ok(out)
}

/// Decodes every conversation; conversations run in parallel, results keep
/// input order.
pub fn decode_split(
    rec: &Recognizer,
    convs: &[PreparedConversation],
    source: ContextSource,
    seed: u64,
) -> Result<Vec<SentenceDecode>> {
    let pool = ContextPool::new(convs);
    let per_conv: Vec<Vec<SentenceDecode>> = convs
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            decode_conversation(
                rec,
                c,
                source,
                &pool,
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            )
        })
        .collect::<Result<_>>()?;
    Ok(per_conv.into_iter().flatten().collect())
}

pub fn pooled_wer(decodes: &[SentenceDecode]) -> WerStats {
    WerStats::pooled(&decodes.iter().map(|d| d.wer).collect::<Vec<_>>())
}

/// `exp(total nll / predicted units)`, eos included. A conversational model
/// scored with `conversational = true` sees the reference preceding sentence.
pub fn perplexity(lm: &LanguageModel, convs: &[PreparedConversation], conversational: bool) -> Result<f64> {
    let items: Vec<(&PreparedConversation, usize)> = convs
        .iter()
        .flat_map(|c| (0..c.sentences.len()).map(move |k| (c, k)))
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyCorpus("perplexity over an empty split".into()));
    }
    let parts: Vec<(f64, usize)> = items
        .par_iter()
        .map(|&(c, k)| {
            let prev = (conversational && k > 0).then(|| c.sentences[k - 1].words.as_slice());
            lm.sentence_loss(&c.sentences[k].units, prev, None)
        })
        .collect::<Result<_>>()?;
    let nll: f64 = parts.iter().map(|p| p.0).sum();
    let tokens: usize = parts.iter().map(|p| p.1).sum();
    Ok((nll / tokens as f64).exp())
}

#[derive(Serialize)]
struct NbestRecord<'a> {
    conv_id: &'a str,
    index: usize,
    context_source: &'a str,
    rank: usize,
    units: &'a [usize],
    words: Vec<String>,
    score: f64,
    att: f64,
    ctc: f64,
    lm: f64,
    length: usize,
}

/// One JSON line per hypothesis.
pub fn nbest_jsonl(decodes: &[SentenceDecode], tokenizer: &Tokenizer) -> Result<String> {
    let mut out = String::new();
    for d in decodes {
        for (rank, h) in d.nbest.iter().enumerate() {
            let rec = NbestRecord {
                conv_id: &d.conv_id,
                index: d.index,
                context_source: d.source.as_str(),
                rank,
                units: &h.units,
                words: tokenizer.decode(&h.units)?,
                score: h.score,
                att: h.scores.att,
                ctc: h.scores.ctc,
                lm: h.scores.lm,
                length: h.scores.length,
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
            let _ = writeln!(out, "{line}");
        }
    }
    Ok(out)
}
