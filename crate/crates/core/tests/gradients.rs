//! Analytic gradients against central finite differences.

mod common;

use common::{conversation_loss, fd_check, features, randomize, rvec, tiny_config, toy_conversation, FD_STEP};
use ctxasr::ctc::ctc_loss;
use ctxasr::model::{AsrModel, ContextEncoder, ContextMode, LanguageModel, LmConfig};
use ctxasr::numcore::ops::{dot, log_softmax};
use ctxasr::numcore::{AttentionEncGrads, Blstm, Grads, Init, LocationAttention, LstmCell, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn assert_report(what: &str, seed: u64, r: common::FdReport) {
    assert!(r.checked > 0, "{what}: nothing checked");
    assert!(
        r.max_rel < TOL,
        "{what} seed {seed}: max rel {:e} at {}",
        r.max_rel,
        r.worst
    );
}

#[test]
fn lstm_step_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, hidden) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut ps = ParamSet::new();
        let cell = LstmCell::new(&mut ps, "l", input, hidden, Init::Uniform(0.8), &mut rng).unwrap();
        let x = rvec(&mut rng, input);
        let h0 = rvec(&mut rng, hidden);
        let c0 = rvec(&mut rng, hidden);
        let wh = rvec(&mut rng, hidden);
        let wc = rvec(&mut rng, hidden);
        let r = fd_check(
            &mut ps,
            |_| true,
            |ps, g: Option<&mut Grads>| {
                let (h, c, cache) = cell.step(ps, &x, &h0, &c0);
                if let Some(g) = g {
                    cell.step_backward(ps, g, &cache, &wh, &wc);
                }
                dot(&h, &wh) + dot(&c, &wc)
            },
        );
        assert_report("lstm_step", seed, r);
    }
}

#[test]
fn blstm_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (input, hidden, len) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5));
        let mut ps = ParamSet::new();
        let layer = Blstm::new(&mut ps, "b", input, hidden, Init::Uniform(0.8), &mut rng).unwrap();
        let seq: Vec<Vec<f64>> = (0..len).map(|_| rvec(&mut rng, input)).collect();
        let w: Vec<Vec<f64>> = (0..len).map(|_| rvec(&mut rng, 2 * hidden)).collect();
        let r = fd_check(
            &mut ps,
            |_| true,
            |ps, g: Option<&mut Grads>| {
                let (out, cache) = layer.forward(ps, &seq).unwrap();
                if let Some(g) = g {
                    layer.backward(ps, g, &cache, &w);
                }
                out.iter().zip(&w).map(|(o, w)| dot(o, w)).sum()
            },
        );
        assert_report("blstm", seed, r);
    }
}

#[test]
fn location_attention_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (enc_dim, q_dim, att_dim) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let frames = rng.random_range(1..6);
        let mut ps = ParamSet::new();
        let att = LocationAttention::new(
            &mut ps,
            "a",
            enc_dim,
            q_dim,
            att_dim,
            2,
            3,
            Init::Uniform(0.8),
            &mut rng,
        )
        .unwrap();
        let enc: Vec<Vec<f64>> = (0..frames).map(|_| rvec(&mut rng, enc_dim)).collect();
        let q = rvec(&mut rng, q_dim);
        let raw: Vec<f64> = (0..frames).map(|_| rng.random_range(0.1..1.0)).collect();
        let prev: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
        let wg = rvec(&mut rng, enc_dim);
        let wa = rvec(&mut rng, frames);
        let r = fd_check(
            &mut ps,
            |_| true,
            |ps, g: Option<&mut Grads>| {
                let keys = att.keys(ps, &enc);
                let (ctx, align, cache) = att.step(ps, &q, &enc, &keys, &prev);
                if let Some(g) = g {
                    let mut sink = AttentionEncGrads::zeros(frames, enc_dim, att_dim);
                    att.step_backward(ps, g, &cache, &enc, &wg, &wa, &mut sink);
                    att.keys_backward(ps, g, &enc, &mut sink);
                }
                dot(&ctx, &wg) + dot(&align, &wa)
            },
        );
        assert_report("location_attention", seed, r);
    }
}

#[test]
fn context_encoder_gradients() {
    for mode in [ContextMode::Mean, ContextMode::Attentional] {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let mut ps = ParamSet::new();
            let enc = ContextEncoder::new(&mut ps, "c", mode, 6, 3, 4, Init::Uniform(0.8), &mut rng).unwrap();
            let len = rng.random_range(1..5);
            let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..6)).collect();
            let w = rvec(&mut rng, 3);
            let label = rng.random_range(0..4);
            let r = fd_check(
                &mut ps,
                |_| true,
                |ps, g: Option<&mut Grads>| {
                    let out = enc.forward(ps, &ids).unwrap();
                    let conv = enc.conv_id_loss(&out, label);
                    if let Some(g) = g {
                        let dl = conv.as_ref().map(|(_, d)| d.as_slice());
                        enc.backward(ps, g, &out, &w, dl);
                    }
                    dot(&out.vector, &w) + conv.map_or(0.0, |(l, _)| l)
                },
            );
            assert_report(&format!("context {mode:?}"), seed, r);
        }
    }
}

#[test]
fn encoder_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let cfg = tiny_config(ContextMode::Baseline, &mut rng);
        let mut model = AsrModel::new(cfg, seed).unwrap();
        randomize(&mut model.ps, 0.8, seed);
        let f = features(&mut rng, 5, 2);
        let frames = model.encoder.output_frames(5);
        let w: Vec<Vec<f64>> = (0..frames).map(|_| rvec(&mut rng, 3)).collect();
        let encoder = model.encoder.clone();
        let r = fd_check(
            &mut model.ps,
            |n| n.starts_with("enc."),
            |ps, g: Option<&mut Grads>| {
                let (h, cache) = encoder.forward(ps, &f).unwrap();
                if let Some(g) = g {
                    encoder.backward(ps, g, &cache, &w);
                }
                h.iter().zip(&w).map(|(a, b)| dot(a, b)).sum()
            },
        );
        assert_report("encoder", seed, r);
    }
}

#[test]
fn decoder_step_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let cfg = tiny_config(ContextMode::Mean, &mut rng);
        let mut model = AsrModel::new(cfg, seed).unwrap();
        randomize(&mut model.ps, 0.8, seed);
        let enc: Vec<Vec<f64>> = (0..3).map(|_| rvec(&mut rng, 3)).collect();
        let ctx = rvec(&mut rng, 2);
        let target = [rng.random_range(2..6)];
        let decoder = model.decoder.clone();
        let r = fd_check(
            &mut model.ps,
            |n| n.starts_with("dec."),
            |ps, g: Option<&mut Grads>| {
                let keys = decoder.att.keys(ps, &enc);
                let trace = decoder.forward(ps, &enc, &keys, &target, Some(&ctx)).unwrap();
                if let Some(g) = g {
                    let mut d_enc = vec![vec![0.0; 3]; enc.len()];
                    decoder.backward(ps, g, &enc, &trace, Some(&ctx), 1.0, &mut d_enc);
                }
                trace.nll
            },
        );
        assert_report("decoder", seed, r);
    }
}

#[test]
fn ctc_gradient_wrt_logits() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let frames = rng.random_range(2..7);
        let vocab = rng.random_range(2..5);
        let len = rng.random_range(1..3);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(1..vocab)).collect();
        let mut logits: Vec<Vec<f64>> = (0..frames).map(|_| rvec(&mut rng, vocab)).collect();
        let nll = |l: &[Vec<f64>]| {
            let lp: Vec<Vec<f64>> = l.iter().map(|r| log_softmax(r)).collect();
            ctc_loss(&lp, &target, 0).map(|r| r.nll)
        };
        let lp: Vec<Vec<f64>> = logits.iter().map(|r| log_softmax(r)).collect();
        let Ok(res) = ctc_loss(&lp, &target, 0) else {
            continue;
        };
        let mut worst: f64 = 0.0;
        for t in 0..frames {
            for k in 0..vocab {
                let o = logits[t][k];
                logits[t][k] = o + FD_STEP;
                let up = nll(&logits).unwrap();
                logits[t][k] = o - FD_STEP;
                let down = nll(&logits).unwrap();
                logits[t][k] = o;
                let num = (up - down) / (2.0 * FD_STEP);
                let ana = res.grad_logits[t][k];
                worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(common::FD_FLOOR));
            }
        }
        assert!(worst < TOL, "ctc seed {seed}: {worst:e}");
    }
}

#[test]
fn language_model_gradients() {
    for conversational in [false, true] {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let mut cfg = LmConfig::new(5, conversational);
            cfg.emb_dim = 2;
            cfg.hidden = 3;
            cfg.ctx_dim = 2;
            cfg.context_words = vec!["p".into(), "q".into()];
            let mut lm = LanguageModel::new(cfg, seed).unwrap();
            randomize(&mut lm.ps, 0.8, seed);
            let units: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(2..5)).collect();
            let prev = vec!["q".to_string(), "p".to_string(), "zz".to_string()];
            let mut ps = lm.ps.clone();
            let r = fd_check(
                &mut ps,
                |_| true,
                |ps, g: Option<&mut Grads>| {
                    let mut m = lm.clone();
                    m.ps = ps.clone();
                    let (nll, _) = m.sentence_loss(&units, Some(&prev), g).unwrap();
                    nll
                },
            );
            assert_report(&format!("lm conversational={conversational}"), seed, r);
        }
    }
}

#[test]
fn full_model_gradients_all_modes() {
    let start = std::time::Instant::now();
    for mode in [ContextMode::Baseline, ContextMode::Mean, ContextMode::Attentional] {
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
            let cfg = tiny_config(mode, &mut rng);
            let mut model = AsrModel::new(cfg, seed).unwrap();
            randomize(&mut model.ps, 0.5, seed);
            let data = toy_conversation(&mut rng);
            let mut ps = model.ps.clone();
            let r = fd_check(
                &mut ps,
                |_| true,
                |ps, g: Option<&mut Grads>| {
                    model.ps = ps.clone();
                    conversation_loss(&model, &data, g)
                },
            );
            assert_eq!(r.checked, model.ps.num_values());
            assert_report(&format!("full model {mode:?}"), seed, r);
        }
    }
    assert!(start.elapsed().as_secs() < 120);
}
