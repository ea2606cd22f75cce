//! Conversational context vectors built from the words of the preceding
//! sentence.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::ops::{axpy, cross_entropy, dot, softmax, softmax_backward};
use crate::numcore::{Embedding, Grads, Init, Linear, ParamId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    Baseline,
    Mean,
    #[serde(alias = "att")]
    Attentional,
}

impl ContextMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::Baseline => "baseline",
            ContextMode::Mean => "mean",
            ContextMode::Attentional => "att",
        }
    }

    pub fn uses_context(self) -> bool {
        self != ContextMode::Baseline
    }
}

impl std::str::FromStr for ContextMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ContextMode::Baseline),
            "mean" => Ok(ContextMode::Mean),
            "att" | "attentional" => Ok(ContextMode::Attentional),
            other => Err(crate::Error::Config(format!("unknown context mode `{other}`"))),
        }
    }
}

/// Where a context vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextSource {
    Oracle,
    Predicted,
    Random,
    Zero,
}

impl ContextSource {
    pub const ALL: [ContextSource; 4] = [
        ContextSource::Oracle,
        ContextSource::Predicted,
        ContextSource::Zero,
        ContextSource::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextSource::Oracle => "oracle",
            ContextSource::Predicted => "predicted",
            ContextSource::Random => "random",
            ContextSource::Zero => "zero",
        }
    }
}

impl std::str::FromStr for ContextSource {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ContextSource::Oracle),
            "predicted" => Ok(ContextSource::Predicted),
            "random" => Ok(ContextSource::Random),
            "zero" => Ok(ContextSource::Zero),
            other => Err(crate::Error::Config(format!("unknown context source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub values: Vec<f64>,
    pub source: ContextSource,
}

/// Word-level vocabulary for context embeddings; id 0 is the unknown word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordIndex {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl WordIndex {
    pub fn new(words: &[String]) -> Self {
        let mut sorted: Vec<String> = words.to_vec();
        sorted.sort();
        sorted.dedup();
        let ids = sorted.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        WordIndex { words: sorted, ids }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Rows needed in an embedding table, including the unknown word.
    pub fn rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoder {
    pub mode: ContextMode,
    pub emb: Embedding,
    /// Attentional mode: per-word score `qᵀ e_i`.
    pub scorer: Option<ParamId>,
    /// Attentional mode: conversation-ID classifier over the context vector.
    pub classifier: Option<Linear>,
}

#[derive(Debug, Clone)]
pub struct ContextOutput {
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
    pub conv_logits: Option<Vec<f64>>,
    ids: Vec<usize>,
}

impl ContextEncoder {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        mode: ContextMode,
        rows: usize,
        dim: usize,
        num_conv_ids: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let emb = Embedding {
            table: ps.add(&format!("{prefix}.emb"), &[rows, dim], init, rng)?,
            rows,
            dim,
        };
        let (scorer, classifier) = if mode == ContextMode::Attentional {
            let scorer = ps.add(&format!("{prefix}.scorer"), &[dim], init, rng)?;
            let classes = num_conv_ids.max(1);
            let classifier = Linear {
                w: ps.add(&format!("{prefix}.convid.w"), &[classes, dim], init, rng)?,
                b: ps.add(&format!("{prefix}.convid.b"), &[classes], init, rng)?,
                input: dim,
                output: classes,
            };
            (Some(scorer), Some(classifier))
        } else {
            (None, None)
        };
        Ok(ContextEncoder {
            mode,
            emb,
            scorer,
            classifier,
        })
    }

    pub fn dim(&self) -> usize {
        self.emb.dim
    }

    /// Context vector of a non-empty word-id sequence; `None` when empty.
    pub fn forward(&self, ps: &ParamSet, ids: &[usize]) -> Option<ContextOutput> {
        if ids.is_empty() {
            return None;
        }
        let weights = match self.scorer {
            Some(q) => {
                let q = ps.v(q);
                let scores: Vec<f64> = ids.iter().map(|&i| dot(q, self.emb.row(ps, i))).collect();
                softmax(&scores)
            }
            None => vec![1.0 / ids.len() as f64; ids.len()],
        };
        let mut vector = vec![0.0; self.dim()];
        for (&i, &w) in ids.iter().zip(&weights) {
            axpy(w, self.emb.row(ps, i), &mut vector);
        }
        let conv_logits = self.classifier.map(|c| c.forward(ps, &vector));
        Some(ContextOutput {
            vector,
            weights,
            conv_logits,
            ids: ids.to_vec(),
        })
    }

    /// Cross-entropy of the conversation-ID head and its gradient on the logits.
    pub fn conv_id_loss(&self, out: &ContextOutput, conv_label: usize) -> Option<(f64, Vec<f64>)> {
        out.conv_logits
            .as_ref()
            .and_then(|l| cross_entropy(l, conv_label.min(l.len() - 1)).ok())
    }

    /// Backward given the gradient on the context vector and, for the
    /// attentional mode, on the classifier logits.
    pub fn backward(
        &self,
        ps: &ParamSet,
        grads: &mut Grads,
        out: &ContextOutput,
        dvec: &[f64],
        dconv_logits: Option<&[f64]>,
    ) {
        let mut dc = dvec.to_vec();
        if let (Some(cls), Some(dl)) = (self.classifier, dconv_logits) {
            cls.backward(ps, grads, &out.vector, dl, &mut dc);
        }
        match self.scorer {
            Some(q_id) => {
                let dw: Vec<f64> = out.ids.iter().map(|&i| dot(&dc, self.emb.row(ps, i))).collect();
                let ds = softmax_backward(&out.weights, &dw);
                let q = ps.v(q_id).to_vec();
                for (k, &i) in out.ids.iter().enumerate() {
                    axpy(ds[k], self.emb.row(ps, i), grads.g(q_id));
                    let mut de = vec![0.0; self.dim()];
                    axpy(out.weights[k], &dc, &mut de);
                    axpy(ds[k], &q, &mut de);
                    self.emb.backward(grads, i, &de);
                }
            }
            None => {
                for (&i, &w) in out.ids.iter().zip(&out.weights) {
                    let mut de = vec![0.0; self.dim()];
                    axpy(w, &dc, &mut de);
                    self.emb.backward(grads, i, &de);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn encoder(mode: ContextMode, init: Init) -> (ParamSet, ContextEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let enc = ContextEncoder::new(&mut ps, "ctx", mode, 6, 4, 3, init, &mut rng).unwrap();
        (ps, enc)
    }

    #[test]
    fn mean_of_one_word_is_its_embedding() {
        let (ps, enc) = encoder(ContextMode::Mean, Init::Uniform(0.5));
        let out = enc.forward(&ps, &[3]).unwrap();
        assert_eq!(out.vector, enc.emb.row(&ps, 3));
    }

    #[test]
    fn mean_of_two_words() {
        let (ps, enc) = encoder(ContextMode::Mean, Init::Uniform(0.5));
        let out = enc.forward(&ps, &[1, 4]).unwrap();
        for j in 0..4 {
            let e = (enc.emb.row(&ps, 1)[j] + enc.emb.row(&ps, 4)[j]) / 2.0;
            assert!((out.vector[j] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_is_order_invariant() {
        let (ps, enc) = encoder(ContextMode::Mean, Init::Uniform(0.5));
        let a = enc.forward(&ps, &[1, 4, 2, 5]).unwrap().vector;
        let b = enc.forward(&ps, &[5, 2, 1, 4]).unwrap().vector;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn attentional_single_word() {
        let (ps, enc) = encoder(ContextMode::Attentional, Init::Uniform(0.5));
        let out = enc.forward(&ps, &[2]).unwrap();
        assert_eq!(out.weights, vec![1.0]);
        assert_eq!(out.vector, enc.emb.row(&ps, 2));
        assert_eq!(out.conv_logits.unwrap().len(), 3);
    }

    #[test]
    fn zero_scorer_reduces_to_mean() {
        let (mut ps, enc) = encoder(ContextMode::Attentional, Init::Uniform(0.5));
        ps.get_mut(enc.scorer.unwrap())
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let att = enc.forward(&ps, &[1, 3, 3, 5]).unwrap();
        let mean: Vec<f64> = (0..4)
            .map(|j| [1, 3, 3, 5].iter().map(|&i| enc.emb.row(&ps, i)[j]).sum::<f64>() / 4.0)
            .collect();
        for (a, m) in att.vector.iter().zip(&mean) {
            assert!((a - m).abs() < 1e-15);
        }
        assert!(att.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn empty_sequence_has_no_context() {
        let (ps, enc) = encoder(ContextMode::Mean, Init::Uniform(0.5));
        assert!(enc.forward(&ps, &[]).is_none());
    }

    #[test]
    fn unknown_words_map_to_row_zero() {
        let idx = WordIndex::new(&["b".to_string(), "a".to_string(), "b".to_string()]);
        assert_eq!(idx.rows(), 3);
        assert_eq!(idx.ids(&["a", "b", "zz"]), vec![1, 2, 0]);
    }
}
