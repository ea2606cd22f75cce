//! Independent oracles shared by the test targets.

use std::collections::{BTreeMap, HashSet};

use ctxasr::ctc::ctc_loss;
use ctxasr::decode::beam::weighted;
use ctxasr::decode::{BeamConfig, Hypothesis};
use ctxasr::model::{AsrModel, EncodedUtterance, LanguageModel};
use ctxasr::tokenizer::BLANK_ID;
use ctxasr::train::BatchPlan;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const BLANK: usize = BLANK_ID;

pub fn random_log_post(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            let z: Vec<f64> = (0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            z.iter().map(|v| v - lse).collect()
        })
        .collect()
}

pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Probability of every collapsed label sequence, by enumerating all
/// `vocab^frames` paths.
pub fn all_alignments(log_post: &[Vec<f64>], vocab: usize) -> Vec<(Vec<usize>, f64)> {
    let frames = log_post.len();
    let total = vocab.pow(frames as u32);
    let mut sums: std::collections::BTreeMap<Vec<usize>, f64> = Default::default();
    for code in 0..total {
        let mut c = code;
        let mut path = Vec::with_capacity(frames);
        let mut lp = 0.0;
        for row in log_post {
            let u = c % vocab;
            c /= vocab;
            path.push(u);
            lp += row[u];
        }
        *sums.entry(collapse(&path)).or_insert(0.0) += lp.exp();
    }
    sums.into_iter().collect()
}

pub fn prob_of(table: &[(Vec<usize>, f64)], target: &[usize]) -> f64 {
    table.iter().find(|(y, _)| y == target).map_or(0.0, |e| e.1)
}

pub fn random_target(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<usize> {
    let len = rng.random_range(0..=3);
    (0..len).map(|_| rng.random_range(1..vocab)).collect()
}

/// Independent check of a plan: distinct conversations per batch, sentence
/// `k - 1` strictly before `k`, and every sentence exactly once.
pub fn violations(plan: &BatchPlan, ids: &[String], lengths: &[usize]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (b, batch) in plan.batches.iter().enumerate() {
        let mut in_batch = HashSet::new();
        for item in batch {
            if item.conv >= ids.len() || ids[item.conv] != item.conv_id {
                problems.push(format!("batch {b}: bad conversation reference {item:?}"));
                continue;
            }
            if !in_batch.insert(item.conv) {
                problems.push(format!("batch {b}: conversation {} twice", item.conv_id));
            }
            if item.sentence >= lengths[item.conv] {
                problems.push(format!("batch {b}: sentence {} out of range", item.sentence));
            }
            if seen.insert((item.conv, item.sentence), b).is_some() {
                problems.push(format!("sentence {}#{} repeated", item.conv_id, item.sentence));
            }
        }
        if batch.windows(2).any(|w| w[0].conv_id > w[1].conv_id) {
            problems.push(format!("batch {b}: not sorted by conversation id"));
        }
    }
    for (c, &len) in lengths.iter().enumerate() {
        for k in 0..len {
            match seen.get(&(c, k)) {
                None => problems.push(format!("sentence {}#{k} missing", ids[c])),
                Some(&b) if k > 0 => {
                    if let Some(&prev) = seen.get(&(c, k - 1)) {
                        if prev >= b {
                            problems.push(format!("{}: sentence {k} not after {}", ids[c], k - 1));
                        }
                    }
                }
                Some(_) => {}
            }
        }
    }
    problems
}

/// Pure attention log-probability of `units + [eos]`.
pub fn attention_score(m: &AsrModel, enc: &EncodedUtterance, units: &[usize], ctx: Option<&[f64]>) -> f64 {
    -m.decoder
        .forward(&m.ps, &enc.states, &enc.keys, units, ctx)
        .unwrap()
        .nll
}

/// Largest deviation between a finished hypothesis' stored scores and the
/// attention, CTC and LM terms recomputed from scratch.
pub fn decomposition_error(
    m: &AsrModel,
    l: Option<&LanguageModel>,
    enc: &EncodedUtterance,
    ctx: Option<&[f64]>,
    h: &Hypothesis,
    cfg: &BeamConfig,
) -> f64 {
    let att = attention_score(m, enc, &h.units, ctx);
    let ctc = -ctc_loss(&enc.ctc_log_post, &h.units, BLANK).unwrap().nll;
    let lm = l.map_or(0.0, |l| l.lm_sequence_logprob(&h.units, None).unwrap());
    let total = att + weighted(cfg.alpha, ctc) + weighted(cfg.beta, lm) + cfg.penalty * h.units.len() as f64;
    if h.scores.length != h.units.len() {
        return f64::INFINITY;
    }
    [
        h.score - total,
        h.scores.att - att,
        weighted(cfg.alpha, h.scores.ctc - ctc),
        weighted(cfg.beta, h.scores.lm - lm),
        h.scores.combined(cfg) - h.score,
    ]
    .iter()
    .fold(0.0, |m, d| f64::max(m, d.abs()))
}
