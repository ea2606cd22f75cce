#![allow(dead_code)]

pub mod oracles;
pub mod pipeline;

use ctxasr::model::{AsrModel, ContextMode, ModelConfig, Utterance};
use ctxasr::numcore::{Grads, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely: central differences
/// at this step carry roundoff near 1e-10 for losses of order 10.
pub const FD_FLOOR: f64 = 1e-5;

/// Overwrites every parameter with draws from U(-a, a).
pub fn randomize(ps: &mut ParamSet, a: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in ps.iter_mut() {
        t.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-a..a));
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares the analytic gradient of `f` against central differences for
/// every entry of every parameter whose name passes `filter`.
pub fn fd_check<F>(ps: &mut ParamSet, filter: impl Fn(&str) -> bool, mut f: F) -> FdReport
where
    F: FnMut(&ParamSet, Option<&mut Grads>) -> f64,
{
    let mut grads = ps.zero_grads();
    f(ps, Some(&mut grads));
    let ids: Vec<_> = ps
        .iter()
        .filter(|(_, n, _)| filter(n))
        .map(|(id, n, _)| (id, n.to_string()))
        .collect();
    let mut report = FdReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (id, name) in ids {
        for i in 0..ps.get(id).len() {
            let orig = ps.get(id).values()[i];
            ps.get_mut(id).values_mut()[i] = orig + FD_STEP;
            let up = f(ps, None);
            ps.get_mut(id).values_mut()[i] = orig - FD_STEP;
            let down = f(ps, None);
            ps.get_mut(id).values_mut()[i] = orig;
            let num = (up - down) / (2.0 * FD_STEP);
            let ana = grads.get(id)[i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(FD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{name}[{i}] analytic {ana:e} numeric {num:e}");
            }
        }
    }
    report
}

pub fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn tiny_config(mode: ContextMode, rng: &mut ChaCha8Rng) -> ModelConfig {
    let mut cfg = ModelConfig::new(mode, 6, 2);
    cfg.subsample = rng.random_range(1..3);
    cfg.enc_layers = rng.random_range(1..3);
    cfg.enc_hidden = 2;
    cfg.enc_dim = 3;
    cfg.emb_dim = 2;
    cfg.dec_hidden = 3;
    cfg.att_dim = 2;
    cfg.att_channels = 2;
    cfg.att_width = 3;
    cfg.ctx_dim = 2;
    cfg.context_words = vec!["a".into(), "b".into(), "c".into()];
    cfg.conv_ids = vec!["x".into(), "y".into()];
    cfg
}

pub fn features(rng: &mut ChaCha8Rng, frames: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..frames).map(|_| rvec(rng, dim)).collect()
}

/// Summed joint loss of a two-sentence conversation; the second sentence is
/// conditioned on the first one's words.
pub fn conversation_loss(model: &AsrModel, data: &ToyConversation, mut g: Option<&mut Grads>) -> f64 {
    let mut total = 0.0;
    for (i, (f, t)) in data.sentences.iter().enumerate() {
        let prev = (i > 0).then(|| data.words[i - 1].as_slice());
        let u = Utterance {
            features: f,
            target: t,
            prev_words: prev,
            conv_id: Some("y"),
        };
        total += model.loss(&u, g.as_deref_mut()).unwrap().total;
    }
    total
}

pub struct ToyConversation {
    pub sentences: Vec<(Vec<Vec<f64>>, Vec<usize>)>,
    pub words: Vec<Vec<String>>,
}

pub fn toy_conversation(rng: &mut ChaCha8Rng) -> ToyConversation {
    ToyConversation {
        sentences: vec![(features(rng, 6, 2), vec![3, 4]), (features(rng, 5, 2), vec![5, 2])],
        words: vec![vec!["a".into(), "c".into(), "a".into()], vec!["b".into()]],
    }
}
