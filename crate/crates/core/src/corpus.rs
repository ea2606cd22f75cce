//! Synthetic multi-sentence conversations.
//!
//! Every conversation draws one topic; each word is taken from that topic's
//! pool with probability `topic_word_fraction` and uniformly from the lexicon
//! otherwise. Acoustic features are per-word prototype blocks plus Gaussian
//! noise. Words sharing an acoustic cluster differ only by a small offset, and
//! each cluster holds one word per topic, so the topic of the preceding
//! sentence is what separates near-homophones.

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_dim: usize,
    /// Inclusive range of prototype lengths in frames.
    pub frames_per_word: (usize, usize),
    pub noise_sigma: f64,
    pub prototype_seed: u64,
    /// Number of consecutive word ids sharing one base prototype and length.
    pub cluster_size: usize,
    /// Scale of the word-specific deviation from its cluster prototype.
    pub word_offset_scale: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            feature_dim: 16,
            frames_per_word: (3, 6),
            noise_sigma: 0.3,
            prototype_seed: 7,
            cluster_size: 6,
            word_offset_scale: 0.12,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.frames_per_word;
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "frames_per_word range {lo}..={hi} is empty or zero"
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be a finite non-negative number".into()));
        }
        if self.cluster_size == 0 {
            return Err(Error::Config("cluster_size must be at least 1".into()));
        }
        if !(self.word_offset_scale >= 0.0) {
            return Err(Error::Config("word_offset_scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub train_conversations: usize,
    pub dev_conversations: usize,
    pub eval_conversations: usize,
    pub sentences_per_conversation: (usize, usize),
    pub words_per_sentence: (usize, usize),
    pub lexicon_size: usize,
    pub topic_count: usize,
    pub topic_word_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            train_conversations: 360,
            dev_conversations: 10,
            eval_conversations: 20,
            sentences_per_conversation: (4, 7),
            words_per_sentence: (3, 6),
            lexicon_size: 60,
            topic_count: 6,
            topic_word_fraction: 0.8,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (usize, usize)| lo >= 1 && lo <= hi;
        if !range_ok(self.sentences_per_conversation) || !range_ok(self.words_per_sentence) {
            return Err(Error::Config(
                "sentence and word count ranges must be positive and ordered".into(),
            ));
        }
        if self.topic_count == 0 {
            return Err(Error::Config("topic_count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.topic_word_fraction) {
            return Err(Error::Config(format!(
                "topic_word_fraction {} outside [0, 1]",
                self.topic_word_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub index: usize,
    pub onset_ms: u64,
    pub words: Vec<usize>,
    pub noise_seed: u64,
    /// `frames × feature_dim`.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub conv_id: String,
    pub topic: Option<usize>,
    pub sentences: Vec<Sentence>,
}

/// Fixed per-word prototype frame blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    spec: FeatureSpec,
    blocks: Vec<Vec<Vec<f64>>>,
}

impl PrototypeBank {
    pub fn new(spec: &FeatureSpec, lexicon_size: usize) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.prototype_seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let clusters = lexicon_size.div_ceil(spec.cluster_size);
        let (lo, hi) = spec.frames_per_word;
        let bases: Vec<Vec<Vec<f64>>> = (0..clusters)
            .map(|_| {
                let len = rng.random_range(lo..=hi);
                (0..len)
                    .map(|_| (0..spec.feature_dim).map(|_| std_normal.sample(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let blocks = (0..lexicon_size)
            .map(|w| {
                bases[w / spec.cluster_size]
                    .iter()
                    .map(|frame| {
                        frame
                            .iter()
                            .map(|b| b + spec.word_offset_scale * std_normal.sample(&mut rng))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(PrototypeBank {
            spec: spec.clone(),
            blocks,
        })
    }

    pub fn lexicon_size(&self) -> usize {
        self.blocks.len()
    }

    pub fn prototype(&self, word: usize) -> Option<&[Vec<f64>]> {
        self.blocks.get(word).map(Vec::as_slice)
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }
}

/// Concatenated prototypes of `words` plus i.i.d. noise drawn from `seed`.
pub fn synthesize_features(words: &[usize], bank: &PrototypeBank, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = bank.spec.noise_sigma;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut out = Vec::new();
    for &w in words {
        let block = bank.prototype(w).ok_or(Error::UnknownWord {
            id: w,
            lexicon_size: bank.lexicon_size(),
        })?;
        for frame in block {
            out.push(
                frame
                    .iter()
                    .map(|v| if sigma > 0.0 { v + noise.sample(&mut rng) } else { *v })
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Sorts sentences by `(onset_ms, index)`; ties keep their original order.
pub fn serialize_by_onset(mut conversation: Conversation) -> Conversation {
    conversation.sentences.sort_by_key(|s| (s.onset_ms, s.index));
    conversation
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSet {
    pub feature_spec: FeatureSpec,
    pub config: GeneratorConfig,
    pub lexicon: Vec<String>,
    pub train: Vec<Conversation>,
    pub dev: Vec<Conversation>,
    pub eval: Vec<Conversation>,
}

impl CorpusSet {
    pub fn empty() -> Self {
        CorpusSet {
            feature_spec: FeatureSpec::default(),
            config: GeneratorConfig::default(),
            lexicon: Vec::new(),
            train: Vec::new(),
            dev: Vec::new(),
            eval: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> &[Conversation] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Conversation> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Eval => &mut self.eval,
        }
    }

    pub fn is_empty(&self) -> bool {
        Split::ALL.iter().all(|&s| self.split(s).is_empty())
    }

    pub fn words_of(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&w| self.lexicon[w].clone()).collect()
    }

    /// Transcripts of a split as word strings, in conversation order.
    pub fn transcripts(&self, split: Split) -> Vec<Vec<String>> {
        self.split(split)
            .iter()
            .flat_map(|c| &c.sentences)
            .map(|s| self.words_of(&s.words))
            .collect()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let header = Record::Header {
            version: CORPUS_FORMAT_VERSION,
            feature_spec: self.feature_spec.clone(),
            generator: self.config.clone(),
            lexicon: self.lexicon.clone(),
        };
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        for split in Split::ALL {
            for conv in self.split(split) {
                for s in &conv.sentences {
                    let rec = Record::Sentence {
                        split,
                        conv_id: conv.conv_id.clone(),
                        topic: conv.topic,
                        index: s.index,
                        onset_ms: s.onset_ms,
                        noise_seed: s.noise_seed,
                        words: self.words_of(&s.words).join(" "),
                    };
                    serde_json::to_writer(&mut out, &rec).expect("record serializes");
                    out.push(b'\n');
                }
            }
        }
        out
    }

    /// Parses the line-delimited format, re-synthesizing features.
    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((hline, htext)) = lines.next() else {
            return Ok(CorpusSet::empty());
        };
        let header: Record =
            serde_json::from_str(htext).map_err(|e| Error::parse(origin, hline + 1, format!("header record: {e}")))?;
        let Record::Header {
            version,
            feature_spec,
            generator,
            lexicon,
        } = header
        else {
            return Err(Error::parse(
                origin,
                hline + 1,
                "first record must be the corpus header",
            ));
        };
        if version != CORPUS_FORMAT_VERSION {
            return Err(Error::parse(
                origin,
                hline + 1,
                format!("unsupported corpus version {version}"),
            ));
        }
        feature_spec
            .validate()
            .map_err(|e| Error::parse(origin, hline + 1, e.to_string()))?;
        let bank = PrototypeBank::new(&feature_spec, lexicon.len())?;
        let word_ids: std::collections::HashMap<&str, usize> =
            lexicon.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();

        let mut corpus = CorpusSet {
            feature_spec,
            config: generator,
            lexicon: lexicon.clone(),
            train: Vec::new(),
            dev: Vec::new(),
            eval: Vec::new(),
        };
        for (n, line) in lines {
            let line_no = n + 1;
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, line_no, format!("sentence record: {e}")))?;
            let Record::Sentence {
                split,
                conv_id,
                topic,
                index,
                onset_ms,
                noise_seed,
                words,
            } = rec
            else {
                return Err(Error::parse(origin, line_no, "duplicate header record"));
            };
            let ids = words
                .split_whitespace()
                .map(|w| {
                    word_ids
                        .get(w)
                        .copied()
                        .ok_or_else(|| Error::parse(origin, line_no, format!("word `{w}` not in lexicon")))
                })
                .collect::<Result<Vec<_>>>()?;
            let features = synthesize_features(&ids, &bank, noise_seed)?;
            let sentence = Sentence {
                index,
                onset_ms,
                words: ids,
                noise_seed,
                features,
            };
            let convs = corpus.split_mut(split);
            match convs.last_mut() {
                Some(c) if c.conv_id == conv_id => {
                    let prev = c.sentences.last().expect("conversation has a sentence");
                    if (prev.onset_ms, prev.index) > (onset_ms, index) {
                        return Err(Error::parse(
                            origin,
                            line_no,
                            format!("sentence {index} of `{conv_id}` is out of onset order"),
                        ));
                    }
                    c.sentences.push(sentence);
                }
                _ => {
                    if convs.iter().any(|c| c.conv_id == conv_id) {
                        return Err(Error::parse(
                            origin,
                            line_no,
                            format!("records of conversation `{conv_id}` are not contiguous"),
                        ));
                    }
                    convs.push(Conversation {
                        conv_id,
                        topic,
                        sentences: vec![sentence],
                    });
                }
            }
        }
        Ok(corpus)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Header {
        version: u32,
        feature_spec: FeatureSpec,
        generator: GeneratorConfig,
        lexicon: Vec<String>,
    },
    Sentence {
        split: Split,
        conv_id: String,
        topic: Option<usize>,
        index: usize,
        onset_ms: u64,
        noise_seed: u64,
        words: String,
    },
}

/// Deterministic pronounceable spellings, unique within the lexicon.
pub fn make_lexicon(size: usize, seed: u64) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "sh", "tr"];
    const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1e71_c0de);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syllables = rng.random_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(NUCLEI[rng.random_range(0..NUCLEI.len())]);
        }
        if rng.random_bool(0.3) {
            w.push_str(["n", "s", "k", "r"][rng.random_range(0..4)]);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Word ids of topic `t`: every id congruent to `t` modulo the topic count.
pub fn topic_pool(topic: usize, topic_count: usize, lexicon_size: usize) -> Vec<usize> {
    (topic..lexicon_size).step_by(topic_count).collect()
}

fn split_seed(seed: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 0x7261_696e,
        Split::Dev => 0x6465_7620,
        Split::Eval => 0x6576_616c,
    };
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag ^ (index as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

pub fn generate_conversation(
    conv_id: String,
    rng_seed: u64,
    config: &GeneratorConfig,
    bank: &PrototypeBank,
) -> Result<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let topic = rng.random_range(0..config.topic_count);
    let pool = topic_pool(topic, config.topic_count, config.lexicon_size);
    let (slo, shi) = config.sentences_per_conversation;
    let (wlo, whi) = config.words_per_sentence;
    let n_sent = rng.random_range(slo..=shi);
    let mut onset: u64 = rng.random_range(0..2000);
    let mut sentences = Vec::with_capacity(n_sent);
    for index in 0..n_sent {
        let n_words = rng.random_range(wlo..=whi);
        let words: Vec<usize> = (0..n_words)
            .map(|_| {
                if !pool.is_empty() && rng.random_bool(config.topic_word_fraction) {
                    pool[rng.random_range(0..pool.len())]
                } else {
                    rng.random_range(0..config.lexicon_size)
                }
            })
            .collect();
        let noise_seed = rng.next_u64();
        let features = synthesize_features(&words, bank, noise_seed)?;
        let duration_ms = features.len() as u64 * 10;
        sentences.push(Sentence {
            index,
            onset_ms: onset,
            words,
            noise_seed,
            features,
        });
        onset += duration_ms + rng.random_range(100..1500);
    }
    Ok(serialize_by_onset(Conversation {
        conv_id,
        topic: Some(topic),
        sentences,
    }))
}

/// Generates train/dev/eval splits of whole conversations.
pub fn generate_corpus(config: &GeneratorConfig, spec: &FeatureSpec) -> Result<CorpusSet> {
    config.validate()?;
    spec.validate()?;
    if config.train_conversations == 0 || config.lexicon_size == 0 {
        return Err(Error::EmptyCorpus(
            "the train split needs at least one conversation and a non-empty lexicon".into(),
        ));
    }
    let bank = PrototypeBank::new(spec, config.lexicon_size)?;
    let lexicon = make_lexicon(config.lexicon_size, config.seed);
    let mut corpus = CorpusSet {
        feature_spec: spec.clone(),
        config: config.clone(),
        lexicon,
        train: Vec::new(),
        dev: Vec::new(),
        eval: Vec::new(),
    };
    for (split, count) in [
        (Split::Train, config.train_conversations),
        (Split::Dev, config.dev_conversations),
        (Split::Eval, config.eval_conversations),
    ] {
        let convs = (0..count)
            .map(|i| {
                generate_conversation(
                    format!("{}-{i:04}", split.as_str()),
                    split_seed(config.seed, split, i),
                    config,
                    &bank,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        *corpus.split_mut(split) = convs;
    }
    Ok(corpus)
}
