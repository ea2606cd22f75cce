//! Connectionist temporal classification: loss with exact gradients via
//! forward-backward, and label-synchronous prefix scoring for joint decoding.
//!
//! All arithmetic is in the log domain.

use crate::error::{Error, Result};
use crate::numcore::ops::log_add_exp;

const NEG_INF: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct CtcLossResult {
    /// `-log p(target | input)`.
    pub nll: f64,
    /// Gradient of `nll` with respect to the unnormalized logits whose
    /// log-softmax produced the log-posteriors.
    pub grad_logits: Vec<Vec<f64>>,
}

/// Minimum number of frames that can emit `target`: one per label plus a
/// blank between each pair of equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC negative log-likelihood of `target` given per-frame log-posteriors.
pub fn ctc_loss(log_post: &[Vec<f64>], target: &[usize], blank: usize) -> Result<CtcLossResult> {
    let frames = log_post.len();
    let vocab = log_post.first().map_or(0, Vec::len);
    if log_post.iter().any(|r| r.len() != vocab) {
        return Err(Error::Shape("ragged log-posterior matrix".into()));
    }
    if blank >= vocab.max(1) {
        return Err(Error::UnitOutOfRange {
            id: blank,
            vocab_size: vocab,
        });
    }
    if let Some(&bad) = target.iter().find(|&&u| u >= vocab || u == blank) {
        return Err(Error::UnitOutOfRange {
            id: bad,
            vocab_size: vocab,
        });
    }
    let required = min_frames(target);
    if frames < required || frames == 0 {
        return Err(Error::InfeasibleTarget {
            labels: target.len(),
            required: required.max(1),
            frames,
        });
    }

    // Blank-augmented target: b l1 b l2 ... lU b.
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(target.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![vec![NEG_INF; s_len]; frames];
    alpha[0][0] = log_post[0][blank];
    if s_len > 1 {
        alpha[0][1] = log_post[0][ext[1]];
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut a = alpha[t - 1][s];
            if s >= 1 {
                a = log_add_exp(a, alpha[t - 1][s - 1]);
            }
            if skip_ok(s) {
                a = log_add_exp(a, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = a + log_post[t][ext[s]];
        }
    }

    let mut beta = vec![vec![NEG_INF; s_len]; frames];
    beta[frames - 1][s_len - 1] = log_post[frames - 1][ext[s_len - 1]];
    if s_len > 1 {
        beta[frames - 1][s_len - 2] = log_post[frames - 1][ext[s_len - 2]];
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[t + 1][s];
            if s + 1 < s_len {
                b = log_add_exp(b, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add_exp(b, beta[t + 1][s + 2]);
            }
            beta[t][s] = b + log_post[t][ext[s]];
        }
    }

    let mut log_p = alpha[frames - 1][s_len - 1];
    if s_len > 1 {
        log_p = log_add_exp(log_p, alpha[frames - 1][s_len - 2]);
    }
    if log_p == NEG_INF {
        return Err(Error::InfeasibleTarget {
            labels: target.len(),
            required,
            frames,
        });
    }

    let mut grad_logits = Vec::with_capacity(frames);
    let mut occ = vec![NEG_INF; vocab];
    for t in 0..frames {
        occ.iter_mut().for_each(|v| *v = NEG_INF);
        for s in 0..s_len {
            let k = ext[s];
            occ[k] = log_add_exp(occ[k], alpha[t][s] + beta[t][s] - log_post[t][k]);
        }
        grad_logits.push(
            (0..vocab)
                .map(|k| log_post[t][k].exp() - (occ[k] - log_p).exp())
                .collect(),
        );
    }
    Ok(CtcLossResult {
        nll: -log_p,
        grad_logits,
    })
}

/// `a - b` in the log domain, with an impossible denominator giving `-inf`.
fn log_ratio(a: f64, b: f64) -> f64 {
    if b == NEG_INF {
        NEG_INF
    } else {
        a - b
    }
}

/// Forward variables of one label prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcPrefixState {
    /// `log p(prefix, frames 0..=t, last frame emits the prefix's final label)`.
    pub r_nonblank: Vec<f64>,
    /// `log p(prefix, frames 0..=t, last frame emits blank)`.
    pub r_blank: Vec<f64>,
    /// Log-probability that the output begins with this prefix.
    pub log_prefix: f64,
    pub last: Option<usize>,
    pub finished: bool,
}

/// Incremental prefix scoring over a fixed posterior matrix.
#[derive(Debug, Clone, Copy)]
pub struct CtcPrefixScorer<'a> {
    log_post: &'a [Vec<f64>],
    blank: usize,
    eos: usize,
}

impl<'a> CtcPrefixScorer<'a> {
    pub fn new(log_post: &'a [Vec<f64>], blank: usize, eos: usize) -> Self {
        CtcPrefixScorer { log_post, blank, eos }
    }

    pub fn frames(&self) -> usize {
        self.log_post.len()
    }

    /// State of the empty prefix, whose probability is 1.
    pub fn initial(&self) -> CtcPrefixState {
        let mut r_blank = Vec::with_capacity(self.frames());
        let mut acc = 0.0;
        for row in self.log_post {
            acc += row[self.blank];
            r_blank.push(acc);
        }
        CtcPrefixState {
            r_nonblank: vec![NEG_INF; self.frames()],
            r_blank,
            log_prefix: 0.0,
            last: None,
            finished: false,
        }
    }

    /// Extends `state` by `unit`. Extending with the end marker finalizes
    /// the state and scores the complete sequence. Returns the new state and
    /// `log p(prefix·unit) - log p(prefix)`.
    pub fn extend(&self, state: &CtcPrefixState, unit: usize) -> Result<(CtcPrefixState, f64)> {
        if state.finished {
            return Err(Error::PrefixFinalized);
        }
        let t_len = self.frames();
        if unit == self.eos {
            let full = match t_len {
                0 => 0.0,
                _ => log_add_exp(state.r_nonblank[t_len - 1], state.r_blank[t_len - 1]),
            };
            let next = CtcPrefixState {
                r_nonblank: state.r_nonblank.clone(),
                r_blank: state.r_blank.clone(),
                log_prefix: full,
                last: state.last,
                finished: true,
            };
            return Ok((next, log_ratio(full, state.log_prefix)));
        }

        let vocab = self.log_post.first().map_or(usize::MAX, Vec::len);
        if unit == self.blank || unit >= vocab {
            return Err(Error::UnitOutOfRange {
                id: unit,
                vocab_size: vocab,
            });
        }
        let mut r_n = vec![NEG_INF; t_len];
        let mut r_b = vec![NEG_INF; t_len];
        if t_len == 0 {
            let next = CtcPrefixState {
                r_nonblank: r_n,
                r_blank: r_b,
                log_prefix: NEG_INF,
                last: Some(unit),
                finished: false,
            };
            return Ok((next, NEG_INF));
        }
        let repeat = state.last == Some(unit);
        if state.last.is_none() {
            r_n[0] = self.log_post[0][unit];
        }
        let mut psi = r_n[0];
        for t in 1..t_len {
            let phi = if repeat {
                state.r_blank[t - 1]
            } else {
                log_add_exp(state.r_blank[t - 1], state.r_nonblank[t - 1])
            };
            r_n[t] = log_add_exp(r_n[t - 1], phi) + self.log_post[t][unit];
            r_b[t] = log_add_exp(r_b[t - 1], r_n[t - 1]) + self.log_post[t][self.blank];
            psi = log_add_exp(psi, phi + self.log_post[t][unit]);
        }
        let incr = log_ratio(psi, state.log_prefix);
        let next = CtcPrefixState {
            r_nonblank: r_n,
            r_blank: r_b,
            log_prefix: psi,
            last: Some(unit),
            finished: false,
        };
        Ok((next, incr))
    }

    /// Total CTC log-probability of a complete sequence via prefix extension.
    pub fn sequence_log_prob(&self, units: &[usize]) -> Result<f64> {
        let mut st = self.initial();
        let mut total = 0.0;
        for &u in units.iter().chain(std::iter::once(&self.eos)) {
            let (next, inc) = self.extend(&st, u)?;
            total += inc;
            st = next;
        }
        Ok(total)
    }
}
