//! Command-line interface: one binary, one subcommand per pipeline stage.
//! Every run appends a manifest to its output directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::corpus::{generate_corpus, CorpusSet, FeatureSpec, GeneratorConfig, Split};
use crate::decode::report::{parse_ppl_csv, parse_wer_csv, ppl_csv, wer_csv};
use crate::decode::{
    decode_split, emit_report, nbest_jsonl, perplexity, pooled_wer, BeamConfig, PplRow, Recognizer, WerRow,
};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::model::{AsrModel, ContextMode, ContextSource, LanguageModel, LmConfig};
use crate::tokenizer::{Tokenizer, DEFAULT_MERGES};
use crate::train::{
    bootstrap, context_vocabulary, new_model, prepare, pretrain_decoder, trace_csv, train_lm, train_recognizer,
    PreparedConversation, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ctxasr",
    version,
    about = "Conversational-context end-to-end speech recognition"
)]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "CTXASR_RUN_DIR", default_value = "run")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic conversational corpus.
    Gen(GenArgs),
    /// Learn a BPE model from the training transcripts.
    Bpe(BpeArgs),
    /// Train a recognizer.
    Train(TrainArgs),
    /// Pre-train the decoder on transcripts only.
    Pretrain(TrainArgs),
    /// Decode a split with one context source.
    Decode(DecodeArgs),
    /// Decode a split with every context source over several seeds.
    Ablate(AblateArgs),
    /// Train a language model and score held-out perplexity.
    Lm(LmArgs),
    /// Collect result tables into CSV and SVG reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BpeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MERGES)]
    pub merges: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// BPE model written by `bpe`.
    #[arg(long)]
    pub bpe: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<ContextMode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Baseline checkpoint to bootstrap a context model from.
    #[arg(long)]
    pub bootstrap: Option<PathBuf>,
    /// Partial decoder checkpoint written by `pretrain`.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BeamArgs {
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub penalty: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "eval")]
    pub split: Split,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bpe: PathBuf,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub context_source: Option<ContextSource>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "eval")]
    pub split: Split,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bpe: PathBuf,
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds for random-context sampling.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Debug, Args)]
pub struct LmArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub bpe: PathBuf,
    #[arg(long)]
    pub conversational: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for `wer.csv` and `perplexity.csv`.
    #[arg(long)]
    pub results: PathBuf,
}

/// Exit code for a failed stage.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::Incompatible(_) | Error::UnknownWord { .. } => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` and runs the command, printing diagnostics to stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stage = cli.command.name();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("ctxasr {stage}: {e}");
            exit_code(&e)
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Bpe(_) => "bpe",
            Command::Train(_) => "train",
            Command::Pretrain(_) => "pretrain",
            Command::Decode(_) => "decode",
            Command::Ablate(_) => "ablate",
            Command::Lm(_) => "lm",
            Command::Report(_) => "report",
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Bpe(a) => cmd_bpe(a, out),
        Command::Train(a) => cmd_train(a, out, false),
        Command::Pretrain(a) => cmd_train(a, out, true),
        Command::Decode(a) => cmd_decode(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
        Command::Lm(a) => cmd_lm(a, out),
        Command::Report(a) => cmd_report(a, out),
    }
}

/// `key = value` lines with `#` comments, as `(line, key, value)`.
pub fn read_kv(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn kv_json(text: &str) -> Value {
    let map: Map<String, Value> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), Value::String(v.trim().to_string())))
        .collect();
    Value::Object(map)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}` cannot be `{v}`")))
}

fn range(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("`{key}` expects `lo..hi`, got `{v}`")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

/// Applies one generator or feature key.
pub fn set_generation_key(g: &mut GeneratorConfig, f: &mut FeatureSpec, key: &str, v: &str) -> Result<()> {
    match key {
        "train_conversations" => g.train_conversations = num(key, v)?,
        "dev_conversations" => g.dev_conversations = num(key, v)?,
        "eval_conversations" => g.eval_conversations = num(key, v)?,
        "sentences_per_conversation" => g.sentences_per_conversation = range(key, v)?,
        "words_per_sentence" => g.words_per_sentence = range(key, v)?,
        "lexicon_size" => g.lexicon_size = num(key, v)?,
        "topic_count" => g.topic_count = num(key, v)?,
        "topic_word_fraction" => g.topic_word_fraction = num(key, v)?,
        "seed" => g.seed = num(key, v)?,
        "feature_dim" => f.feature_dim = num(key, v)?,
        "frames_per_word" => f.frames_per_word = range(key, v)?,
        "noise_sigma" => f.noise_sigma = num(key, v)?,
        "prototype_seed" => f.prototype_seed = num(key, v)?,
        "cluster_size" => f.cluster_size = num(key, v)?,
        "word_offset_scale" => f.word_offset_scale = num(key, v)?,
        other => return Err(Error::Config(format!("unknown generation key `{other}`"))),
    }
    Ok(())
}

pub fn generation_text(g: &GeneratorConfig, f: &FeatureSpec) -> String {
    format!(
        "train_conversations = {}\ndev_conversations = {}\neval_conversations = {}\n\
         sentences_per_conversation = {}..{}\nwords_per_sentence = {}..{}\nlexicon_size = {}\n\
         topic_count = {}\ntopic_word_fraction = {}\nseed = {}\nfeature_dim = {}\n\
         frames_per_word = {}..{}\nnoise_sigma = {}\nprototype_seed = {}\ncluster_size = {}\n\
         word_offset_scale = {}\n",
        g.train_conversations,
        g.dev_conversations,
        g.eval_conversations,
        g.sentences_per_conversation.0,
        g.sentences_per_conversation.1,
        g.words_per_sentence.0,
        g.words_per_sentence.1,
        g.lexicon_size,
        g.topic_count,
        g.topic_word_fraction,
        g.seed,
        f.feature_dim,
        f.frames_per_word.0,
        f.frames_per_word.1,
        f.noise_sigma,
        f.prototype_seed,
        f.cluster_size,
        f.word_offset_scale,
    )
}

fn with_line<T>(path: &Path, line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::parse(path, line, m),
        other => other,
    })
}

fn cmd_gen(a: &GenArgs, out: &Path) -> Result<()> {
    let mut g = GeneratorConfig::default();
    let mut f = FeatureSpec::default();
    let mut m = RunManifest::new("gen", Value::Null, Vec::new());
    if let Some(p) = &a.config {
        for (line, k, v) in read_kv(p)? {
            with_line(p, line, set_generation_key(&mut g, &mut f, &k, &v))?;
        }
        m.input(p)?;
    }
    if let Some(s) = a.seed {
        g.seed = s;
    }
    let corpus = generate_corpus(&g, &f)?;
    let path = out.join("corpus.jsonl");
    corpus.save(&path)?;
    m.config = kv_json(&generation_text(&g, &f));
    m.seeds = vec![g.seed, f.prototype_seed];
    m.output(&path)?;
    m.append(out)?;
    Ok(())
}

fn cmd_bpe(a: &BpeArgs, out: &Path) -> Result<()> {
    let corpus = CorpusSet::load(&a.corpus)?;
    let tok = Tokenizer::learn(&corpus.transcripts(Split::Train), a.merges)?;
    let model = out.join("bpe.model");
    let vocab = out.join("vocab.tsv");
    tok.bpe.save(&model)?;
    std::fs::write(&vocab, tok.vocab.to_tsv()).map_err(|e| Error::io(&vocab, e))?;
    let mut m = RunManifest::new("bpe", json!({ "merges": a.merges }), Vec::new());
    m.input(&a.corpus)?;
    m.output(&model)?;
    m.output(&vocab)?;
    m.append(out)?;
    Ok(())
}

struct Data {
    corpus: CorpusSet,
    tokenizer: Tokenizer,
}

impl Data {
    fn load(corpus: &Path, bpe: &Path) -> Result<Self> {
        Ok(Data {
            corpus: CorpusSet::load(corpus)?,
            tokenizer: Tokenizer::load(bpe)?,
        })
    }

    fn split(&self, s: Split) -> Vec<PreparedConversation> {
        prepare(&self.corpus, s, &self.tokenizer)
    }
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(b) = &a.bootstrap {
        cfg.bootstrap = Some(b.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs, out: &Path, pretrain_only: bool) -> Result<()> {
    let cfg = train_config(a)?;
    let data = Data::load(&a.corpus, &a.bpe)?;
    let (tr, dv) = (data.split(Split::Train), data.split(Split::Dev));
    let feature_dim = data.corpus.feature_spec.feature_dim;
    let name = if pretrain_only { "pretrain" } else { "train" };
    let mut m = RunManifest::new(name, kv_json(&cfg.to_text()), vec![cfg.seed]);
    m.input(&a.corpus)?;
    m.input(&a.bpe)?;
    if let Some(p) = &a.config {
        m.input(p)?;
    }
    let mut model = match &cfg.bootstrap {
        Some(p) if !pretrain_only => {
            let p = PathBuf::from(p);
            let base = AsrModel::load(&p)?;
            m.input(&p)?;
            bootstrap(&base, &cfg, &tr)?
        }
        _ => new_model(&cfg, &data.tokenizer, feature_dim, &tr)?,
    };
    if let Some(p) = &a.init {
        model.load_partial(p)?;
        m.input(p)?;
    }
    let (outcome, ckpt) = if pretrain_only {
        let o = pretrain_decoder(&mut model, &tr, &dv, &cfg)?;
        let path = out.join("decoder.ckpt");
        std::fs::write(&path, model.decoder_checkpoint_bytes()).map_err(|e| Error::io(&path, e))?;
        (o, path)
    } else {
        let o = train_recognizer(&mut model, &tr, &dv, &cfg)?;
        let path = out.join("model.ckpt");
        model.save(&path)?;
        (o, path)
    };
    let trace = out.join("trace.csv");
    std::fs::write(&trace, trace_csv(&outcome.trace)).map_err(|e| Error::io(&trace, e))?;
    let conf = out.join("train.conf");
    std::fs::write(&conf, cfg.to_text()).map_err(|e| Error::io(&conf, e))?;
    for p in [&ckpt, &trace, &conf] {
        m.output(p)?;
    }
    m.append(out)?;
    Ok(())
}

/// Beam settings from an optional config file, then flags.
fn beam_config(config: Option<&Path>, flags: &BeamArgs) -> Result<(BeamConfig, Option<ContextSource>, Option<u64>)> {
    let mut b = BeamConfig::default();
    let (mut source, mut seed) = (None, None);
    if let Some(p) = config {
        for (line, k, v) in read_kv(p)? {
            let r: Result<()> = (|| {
                match k.as_str() {
                    "beam" => b.beam = num(&k, &v)?,
                    "alpha" => b.alpha = num(&k, &v)?,
                    "beta" => b.beta = num(&k, &v)?,
                    "penalty" => b.penalty = num(&k, &v)?,
                    "max_len" => b.max_len = Some(num(&k, &v)?),
                    "context_source" => source = Some(v.parse()?),
                    "seed" => seed = Some(num(&k, &v)?),
                    other => return Err(Error::Config(format!("unknown decoding key `{other}`"))),
                }
                Ok(())
            })();
            with_line(p, line, r)?;
        }
    }
    if let Some(v) = flags.beam {
        b.beam = v;
    }
    if let Some(v) = flags.alpha {
        b.alpha = v;
    }
    if let Some(v) = flags.beta {
        b.beta = v;
    }
    if let Some(v) = flags.penalty {
        b.penalty = v;
    }
    b.validate()?;
    Ok((b, source, seed))
}

fn beam_json(b: &BeamConfig) -> Value {
    serde_json::to_value(b).unwrap_or(Value::Null)
}

fn wer_row(model: &AsrModel, source: ContextSource, split: Split, w: &crate::decode::WerStats, seed: u64) -> WerRow {
    WerRow {
        mode: model.mode().as_str().to_string(),
        context_source: source.as_str().to_string(),
        split: split.as_str().to_string(),
        wer: w.wer,
        subs: w.subs,
        ins: w.ins,
        dels: w.dels,
        seed,
    }
}

fn cmd_decode(a: &DecodeArgs, out: &Path) -> Result<()> {
    let (beam, cfg_source, cfg_seed) = beam_config(a.config.as_deref(), &a.beam)?;
    let source = a.context_source.or(cfg_source).unwrap_or(ContextSource::Zero);
    let seed = a.seed.or(cfg_seed).unwrap_or(1);
    let data = Data::load(&a.corpus, &a.bpe)?;
    let model = AsrModel::load(&a.model)?;
    let lm = a.lm.as_deref().map(LanguageModel::load).transpose()?;
    let rec = Recognizer {
        model: &model,
        lm: lm.as_ref(),
        tokenizer: &data.tokenizer,
        beam,
    };
    let convs = data.split(a.split);
    let decodes = decode_split(&rec, &convs, source, seed)?;
    let nbest = out.join("nbest.jsonl");
    std::fs::write(&nbest, nbest_jsonl(&decodes, &data.tokenizer)?).map_err(|e| Error::io(&nbest, e))?;
    let wer = out.join("wer.csv");
    let row = wer_row(&model, source, a.split, &pooled_wer(&decodes), seed);
    std::fs::write(&wer, wer_csv(&[row])).map_err(|e| Error::io(&wer, e))?;
    let mut conf = beam_json(&beam);
    conf["context_source"] = json!(source.as_str());
    conf["split"] = json!(a.split.as_str());
    let mut m = RunManifest::new("decode", conf, vec![seed]);
    for p in [&a.corpus, &a.bpe, &a.model] {
        m.input(p)?;
    }
    if let Some(p) = &a.lm {
        m.input(p)?;
    }
    m.output(&nbest)?;
    m.output(&wer)?;
    m.append(out)?;
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, out: &Path) -> Result<()> {
    let (beam, _, _) = beam_config(a.config.as_deref(), &a.beam)?;
    if a.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let data = Data::load(&a.corpus, &a.bpe)?;
    let model = AsrModel::load(&a.model)?;
    let lm = a.lm.as_deref().map(LanguageModel::load).transpose()?;
    let rec = Recognizer {
        model: &model,
        lm: lm.as_ref(),
        tokenizer: &data.tokenizer,
        beam,
    };
    let convs = data.split(a.split);
    let mut m = RunManifest::new("ablate", beam_json(&beam), a.seeds.clone());
    let mut rows = Vec::new();
    for &seed in &a.seeds {
        for source in ContextSource::ALL {
            let decodes = decode_split(&rec, &convs, source, seed)?;
            let p = out.join(format!("nbest-{}-{seed}.jsonl", source.as_str()));
            std::fs::write(&p, nbest_jsonl(&decodes, &data.tokenizer)?).map_err(|e| Error::io(&p, e))?;
            m.output(&p)?;
            rows.push(wer_row(&model, source, a.split, &pooled_wer(&decodes), seed));
        }
    }
    let wer = out.join("wer.csv");
    std::fs::write(&wer, wer_csv(&rows)).map_err(|e| Error::io(&wer, e))?;
    for p in [&a.corpus, &a.bpe, &a.model] {
        m.input(p)?;
    }
    m.output(&wer)?;
    m.append(out)?;
    Ok(())
}

fn cmd_lm(a: &LmArgs, out: &Path) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let data = Data::load(&a.corpus, &a.bpe)?;
    let (tr, dv) = (data.split(Split::Train), data.split(Split::Dev));
    let mut lc = LmConfig::new(data.tokenizer.vocab_size(), a.conversational);
    if a.conversational {
        lc.context_words = context_vocabulary(&tr).0;
    }
    let mut lm = LanguageModel::new(lc, cfg.seed)?;
    let outcome = train_lm(&mut lm, &tr, &dv, &cfg)?;
    let name = if a.conversational { "conversational" } else { "baseline" };
    let mut rows = Vec::new();
    for split in [Split::Dev, Split::Eval] {
        let convs = data.split(split);
        if convs.iter().all(|c| c.sentences.is_empty()) {
            continue;
        }
        rows.push(PplRow {
            lm: name.to_string(),
            split: split.as_str().to_string(),
            ppl: perplexity(&lm, &convs, a.conversational)?,
            seed: cfg.seed,
        });
    }
    let ckpt = out.join("lm.ckpt");
    lm.save(&ckpt)?;
    let trace = out.join("trace.csv");
    std::fs::write(&trace, trace_csv(&outcome.trace)).map_err(|e| Error::io(&trace, e))?;
    let ppl = out.join("perplexity.csv");
    std::fs::write(&ppl, ppl_csv(&rows)).map_err(|e| Error::io(&ppl, e))?;
    let mut conf = kv_json(&cfg.to_text());
    conf["conversational"] = json!(a.conversational);
    let mut m = RunManifest::new("lm", conf, vec![cfg.seed]);
    m.input(&a.corpus)?;
    m.input(&a.bpe)?;
    for p in [&ckpt, &trace, &ppl] {
        m.output(p)?;
    }
    m.append(out)?;
    Ok(())
}

fn find_tables(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_tables(&p, found)?;
        } else if matches!(
            p.file_name().and_then(|n| n.to_str()),
            Some("wer.csv" | "perplexity.csv")
        ) {
            found.push(p);
        }
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs, out: &Path) -> Result<()> {
    let mut tables = Vec::new();
    find_tables(&a.results, &mut tables)?;
    let out_abs = out.canonicalize().unwrap_or_else(|_| out.to_path_buf());
    // Earlier reports written into the results tree are not inputs.
    tables.retain(|p| p.parent().and_then(|d| d.canonicalize().ok()).as_deref() != Some(out_abs.as_path()));
    let mut m = RunManifest::new(
        "report",
        json!({ "results": a.results.display().to_string() }),
        Vec::new(),
    );
    let (mut wer_rows, mut ppl_rows) = (Vec::new(), Vec::new());
    for p in &tables {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        if p.ends_with("wer.csv") {
            wer_rows.extend(parse_wer_csv(&text, p)?);
        } else {
            ppl_rows.extend(parse_ppl_csv(&text, p)?);
        }
        m.input(p)?;
    }
    for p in emit_report(&wer_rows, &ppl_rows, out)? {
        m.output(&p)?;
    }
    m.append(out)?;
    Ok(())
}
