#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use ctxasr::manifest::sha256_file;

pub const GEN_CONF: &str = "\
train_conversations = 12
dev_conversations = 2
eval_conversations = 3
lexicon_size = 24
sentences_per_conversation = 2..4
words_per_sentence = 2..4
";

pub const TRAIN_CONF: &str = "\
epochs = 2
batch_size = 4
eps = 1e-5
pretrain_epochs = 2
";

/// Runs the binary inside `dir` so every recorded path is relative.
pub fn ctxasr(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ctxasr"))
        .args(args)
        .current_dir(dir)
        .env_remove("CTXASR_RUN_DIR")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) {
    let o = ctxasr(dir, args);
    assert!(
        o.status.success(),
        "ctxasr {args:?} exited {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

/// gen, bpe, baseline and bootstrapped training, decoder pre-training, both
/// language models, decoding, ablation and the report.
pub fn run_pipeline(dir: &Path) {
    std::fs::write(dir.join("gen.conf"), GEN_CONF).unwrap();
    std::fs::write(dir.join("train.conf"), TRAIN_CONF).unwrap();
    let corpus = ["--corpus", "data/corpus.jsonl"];
    let bpe = ["--bpe", "data/bpe.model"];
    let train = [&corpus[..], &bpe[..], &["--config", "train.conf"]].concat();
    ok(dir, &["gen", "--out", "data", "--config", "gen.conf"]);
    ok(
        dir,
        &[
            "bpe",
            "--out",
            "data",
            "--corpus",
            "data/corpus.jsonl",
            "--merges",
            "200",
        ],
    );
    ok(dir, &[&["train", "--out", "base"], &train[..]].concat());
    ok(
        dir,
        &[
            &[
                "train",
                "--out",
                "mean",
                "--mode",
                "mean",
                "--bootstrap",
                "base/model.ckpt",
            ],
            &train[..],
        ]
        .concat(),
    );
    ok(dir, &[&["pretrain", "--out", "pre"], &train[..]].concat());
    ok(
        dir,
        &[
            &["train", "--out", "pretrained", "--init", "pre/decoder.ckpt"],
            &train[..],
        ]
        .concat(),
    );
    ok(dir, &[&["lm", "--out", "lm"], &train[..]].concat());
    ok(dir, &[&["lm", "--out", "clm", "--conversational"], &train[..]].concat());
    let dec = [
        &corpus[..],
        &bpe[..],
        &["--model", "mean/model.ckpt", "--lm", "lm/lm.ckpt", "--beam", "3"],
    ]
    .concat();
    ok(
        dir,
        &[&["decode", "--out", "dec-zero", "--context-source", "zero"], &dec[..]].concat(),
    );
    ok(dir, &[&["decode", "--out", "dec-default"], &dec[..]].concat());
    ok(
        dir,
        &[
            &["decode", "--out", "dec-oracle", "--context-source", "oracle"],
            &dec[..],
        ]
        .concat(),
    );
    ok(
        dir,
        &[&["ablate", "--out", "ablate", "--seeds", "1,2"], &dec[..]].concat(),
    );
    ok(dir, &["report", "--out", "report", "--results", "."]);
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, String>) {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out);
        } else {
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), sha256_file(&p).unwrap());
        }
    }
}

/// Relative path to SHA-256 of every file under `root`.
pub fn digests(root: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
