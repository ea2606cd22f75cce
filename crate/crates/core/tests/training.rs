//! Training loop contracts: step counts, bootstrap equivalence, decoder
//! pre-training, partial checkpoints and determinism.

use ctxasr::corpus::{generate_corpus, FeatureSpec, GeneratorConfig, Split};
use ctxasr::model::{AsrModel, ContextMode, LanguageModel, LmConfig};
use ctxasr::tokenizer::Tokenizer;
use ctxasr::train::{
    bootstrap, context_vocabulary, evaluate, new_model, plan_batches, prepare, pretrain_decoder, train, train_lm,
    DecoderAsLm, Objective, PreparedConversation, TrainConfig,
};

struct Small {
    tok: Tokenizer,
    train: Vec<PreparedConversation>,
    dev: Vec<PreparedConversation>,
    feature_dim: usize,
}

fn small(train_conversations: usize) -> Small {
    let g = GeneratorConfig {
        train_conversations,
        dev_conversations: 3,
        eval_conversations: 0,
        lexicon_size: 24,
        sentences_per_conversation: (2, 4),
        words_per_sentence: (2, 3),
        ..GeneratorConfig::default()
    };
    let corpus = generate_corpus(&g, &FeatureSpec::default()).unwrap();
    let tok = Tokenizer::learn(&corpus.transcripts(Split::Train), 200).unwrap();
    Small {
        train: prepare(&corpus, Split::Train, &tok),
        dev: prepare(&corpus, Split::Dev, &tok),
        feature_dim: corpus.feature_spec.feature_dim,
        tok,
    }
}

fn config(mode: ContextMode) -> TrainConfig {
    TrainConfig {
        mode,
        eps: 1e-5,
        ..TrainConfig::default()
    }
}

#[test]
fn one_conversation_two_sentences_takes_two_steps() {
    let mut s = small(1);
    s.train[0].sentences.truncate(2);
    let cfg = TrainConfig {
        batch_size: 1,
        ..config(ContextMode::Mean)
    };
    let mut m = new_model(&cfg, &s.tok, s.feature_dim, &s.train).unwrap();
    let o = train(&mut m, &s.train, &[], &cfg, 1).unwrap();
    assert_eq!(o.steps, 2);
    assert_eq!(o.trace.len(), 1);
}

#[test]
fn bootstrap_reproduces_baseline_batch_losses() {
    let s = small(6);
    let cfg = config(ContextMode::Baseline);
    let mut base = new_model(&cfg, &s.tok, s.feature_dim, &s.train).unwrap();
    train(&mut base, &s.train, &[], &cfg, 1).unwrap();
    let ids: Vec<&str> = s.train.iter().map(|c| c.conv_id.as_str()).collect();
    let lens: Vec<usize> = s.train.iter().map(|c| c.sentences.len()).collect();
    let plan = plan_batches(&ids, &lens, 3, 17).unwrap();
    for mode in [ContextMode::Mean, ContextMode::Attentional] {
        let boot = bootstrap(&base, &config(mode), &s.train).unwrap();
        for batch in &plan.batches {
            let (mut a, mut b) = (0.0, 0.0);
            for it in batch {
                let conv = &s.train[it.conv];
                a += base.sentence(conv, it.sentence, None).unwrap().loss;
                let l = boot.sentence(conv, it.sentence, None).unwrap();
                // The conversation-ID head is an auxiliary term outside the
                // recognizer's own loss.
                b += match mode {
                    ContextMode::Attentional => l.loss - boot.config.gamma * conv_id_term(&boot, conv, it.sentence),
                    _ => l.loss,
                };
            }
            assert!((a - b).abs() < 1e-12, "{mode:?}: {a} vs {b}");
        }
    }
}

fn conv_id_term(m: &AsrModel, conv: &PreparedConversation, k: usize) -> f64 {
    let s = &conv.sentences[k];
    let u = ctxasr::model::Utterance {
        features: &s.features,
        target: &s.units,
        prev_words: (k > 0).then(|| conv.sentences[k - 1].words.as_slice()),
        conv_id: Some(&conv.conv_id),
    };
    m.loss(&u, None).unwrap().conv_id
}

#[test]
fn bootstrap_copies_shared_parameters_exactly() {
    let s = small(3);
    let base = new_model(&config(ContextMode::Baseline), &s.tok, s.feature_dim, &s.train).unwrap();
    let boot = bootstrap(&base, &config(ContextMode::Mean), &s.train).unwrap();
    for (id, name, t) in base.ps.iter() {
        let other = boot.ps.id(name).unwrap_or_else(|| panic!("{name} missing"));
        let _ = id;
        assert_eq!(
            t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            boot.ps
                .get(other)
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
    }
    let v = boot.ps.id("dec.merge.v").unwrap();
    assert!(boot.ps.get(v).values().iter().all(|x| *x == 0.0));
}

#[test]
fn pretraining_touches_only_the_decoder_language_model() {
    let s = small(6);
    let cfg = TrainConfig {
        pretrain_epochs: 3,
        ..config(ContextMode::Baseline)
    };
    let mut m = new_model(&cfg, &s.tok, s.feature_dim, &s.train).unwrap();
    let before = m.clone();
    let fresh = DecoderAsLm(&mut before.clone()).params().clone();
    let (fresh_loss, fresh_ppl) = evaluate(&DecoderAsLm(&mut before.clone()), &s.dev).unwrap();
    pretrain_decoder(&mut m, &s.train, &s.dev, &cfg).unwrap();
    let trained: Vec<String> = m
        .decoder_lm_params()
        .iter()
        .map(|&id| m.ps.name(id).to_string())
        .collect();
    for (id, name, t) in m.ps.iter() {
        let old = before.ps.get(id);
        if trained.iter().any(|n| n == name) {
            continue;
        }
        assert_eq!(t, old, "{name} changed during pre-training");
    }
    assert_ne!(&m.ps, &fresh);
    let (loss, ppl) = evaluate(&DecoderAsLm(&mut m.clone()), &s.dev).unwrap();
    assert!(loss < fresh_loss && ppl < fresh_ppl, "{ppl} vs {fresh_ppl}");
}

#[test]
fn partial_checkpoint_leaves_other_parameters() {
    let s = small(3);
    let cfg = config(ContextMode::Baseline);
    let donor = new_model(&TrainConfig { seed: 9, ..cfg.clone() }, &s.tok, s.feature_dim, &s.train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decoder.ckpt");
    std::fs::write(&path, donor.decoder_checkpoint_bytes()).unwrap();
    let mut m = new_model(&cfg, &s.tok, s.feature_dim, &s.train).unwrap();
    let before = m.clone();
    let copied = m.load_partial(&path).unwrap();
    assert_eq!(copied.len(), m.decoder_lm_params().len());
    for (id, name, t) in m.ps.iter() {
        if copied.iter().any(|c| c == name) {
            assert_eq!(t, donor.ps.get(id));
        } else {
            assert_eq!(t, before.ps.get(id), "{name}");
        }
    }
}

#[test]
fn training_is_bit_reproducible() {
    let s = small(5);
    let cfg = config(ContextMode::Attentional);
    let run = || {
        let mut m = new_model(&cfg, &s.tok, s.feature_dim, &s.train).unwrap();
        let o = train(&mut m, &s.train, &s.train, &cfg, 2).unwrap();
        (m.to_bytes(), o.trace)
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert!(a == b);
    assert_eq!(ta, tb);
}

#[test]
fn language_models_train_and_reproduce() {
    let s = small(6);
    let cfg = TrainConfig {
        epochs: 3,
        ..config(ContextMode::Baseline)
    };
    for conversational in [false, true] {
        let mut lc = LmConfig::new(s.tok.vocab_size(), conversational);
        lc.context_words = context_vocabulary(&s.train).0;
        let fresh = LanguageModel::new(lc.clone(), 3).unwrap();
        let (before, _) = evaluate(&fresh, &s.train).unwrap();
        let mut a = fresh.clone();
        let o = train_lm(&mut a, &s.train, &[], &cfg).unwrap();
        let (after, _) = evaluate(&a, &s.train).unwrap();
        assert!(after < before);
        assert_eq!(o.trace.len(), 3);
        let mut b = fresh.clone();
        train_lm(&mut b, &s.train, &[], &cfg).unwrap();
        assert!(a.to_bytes() == b.to_bytes());
    }
}

#[test]
fn empty_training_split_is_an_error() {
    let s = small(2);
    let cfg = config(ContextMode::Baseline);
    let mut m = new_model(&cfg, &s.tok, s.feature_dim, &s.train).unwrap();
    let empty: Vec<PreparedConversation> = Vec::new();
    assert!(train(&mut m, &empty, &[], &cfg, 1).is_err());
}

/// First epoch whose train loss is at or below `threshold`, or `cap + 1`.
fn epochs_to_reach(trace: &[ctxasr::train::EpochRecord], threshold: f64, cap: usize) -> usize {
    trace
        .iter()
        .filter(|r| r.split == Split::Train)
        .find(|r| r.loss <= threshold)
        .map_or(cap + 1, |r| r.epoch)
}

#[test]
fn bootstrap_reaches_the_baseline_loss_no_later_than_scratch() {
    const CAP: usize = 8;
    let s = small(8);
    let (mut boot_epochs, mut scratch_epochs) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let base_cfg = TrainConfig {
            seed,
            ..config(ContextMode::Baseline)
        };
        let mut base = new_model(&base_cfg, &s.tok, s.feature_dim, &s.train).unwrap();
        let o = train(&mut base, &s.train, &[], &base_cfg, 4).unwrap();
        let threshold = o.trace.iter().rev().find(|r| r.split == Split::Train).unwrap().loss;

        let cfg = TrainConfig {
            seed,
            ..config(ContextMode::Mean)
        };
        let mut boot = bootstrap(&base, &cfg, &s.train).unwrap();
        let ob = train(&mut boot, &s.train, &[], &cfg, CAP).unwrap();
        let mut scratch = new_model(&cfg, &s.tok, s.feature_dim, &s.train).unwrap();
        let os = train(&mut scratch, &s.train, &[], &cfg, CAP).unwrap();
        boot_epochs.push(epochs_to_reach(&ob.trace, threshold, CAP));
        scratch_epochs.push(epochs_to_reach(&os.trace, threshold, CAP));
    }
    let median = |mut v: Vec<usize>| {
        v.sort();
        v[v.len() / 2]
    };
    let (b, sc) = (median(boot_epochs.clone()), median(scratch_epochs.clone()));
    assert!(
        b <= CAP && b <= sc,
        "bootstrap {boot_epochs:?} vs scratch {scratch_epochs:?}"
    );
}
