//! Byte-pair encoding over characters with a word-final marker symbol.
//!
//! A word `abc` starts as `a b c ▁`. Learning repeatedly merges the most
//! frequent adjacent pair; equal counts go to the lexicographically smallest
//! pair. The marker sorts after ASCII letters, so letter pairs win ties
//! against marker pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "\u{2581}";
pub const BLANK: &str = "<blank>";
pub const SOS_EOS: &str = "<sos/eos>";
pub const UNK: &str = "<unk>";

pub const BLANK_ID: usize = 0;
pub const SOS_EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Reference configuration at paper scale: roughly ten thousand units.
pub const PAPER_SCALE_UNITS: usize = 9_838;
pub const DEFAULT_MERGES: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    /// Base symbols: every training character plus the word-final marker.
    pub alphabet: Vec<String>,
    /// Merge rules in application order.
    pub merges: Vec<(String, String)>,
}

fn split_word(word: &str) -> Vec<String> {
    word.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

fn apply_merge(symbols: &[String], pair: &(String, String)) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns up to `num_merges` merges. Stops early when no pair remains.
pub fn learn_bpe(transcripts: &[Vec<String>], num_merges: usize) -> Result<BpeModel> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for w in transcripts.iter().flatten() {
        if !w.is_empty() {
            *freq.entry(w.as_str()).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::EmptyCorpus("no words to learn BPE units from".into()));
    }
    let mut alphabet: BTreeSet<String> = BTreeSet::new();
    alphabet.insert(END_OF_WORD.to_string());
    let mut words: Vec<(Vec<String>, usize)> = freq
        .iter()
        .map(|(w, &c)| {
            let s = split_word(w);
            alphabet.extend(s.iter().cloned());
            (s, c)
        })
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, c) in &words {
            for p in syms.windows(2) {
                *counts.entry((p[0].as_str(), p[1].as_str())).or_default() += c;
            }
        }
        // BTreeMap iterates pairs in ascending order, so the first maximum
        // is the lexicographically smallest among equals.
        let Some(best) = counts
            .iter()
            .fold(None::<((&str, &str), usize)>, |acc, (&p, &c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((p, c)),
            })
            .map(|(p, _)| (p.0.to_string(), p.1.to_string()))
        else {
            break;
        };
        for (syms, _) in &mut words {
            *syms = apply_merge(syms, &best);
        }
        merges.push(best);
    }
    Ok(BpeModel {
        alphabet: alphabet.into_iter().collect(),
        merges,
    })
}

impl BpeModel {
    /// Symbols of one word after applying merges in order.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut syms = split_word(word);
        for m in &self.merges {
            if syms.len() < 2 {
                break;
            }
            syms = apply_merge(&syms, m);
        }
        syms
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "#bpe-v1 {}", self.alphabet.join(" ")).unwrap();
        for (a, b) in &self.merges {
            writeln!(out, "{a} {b}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("#bpe-v1"))
            .ok_or_else(|| Error::parse(origin, 1, "missing `#bpe-v1` header"))?;
        let alphabet: Vec<String> = header.split_whitespace().map(String::from).collect();
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => return Err(Error::parse(origin, i + 2, format!("malformed merge `{line}`"))),
            }
        }
        Ok(BpeModel { alphabet, merges })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Unit inventory: specials, then the alphabet, then merge results.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    units: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_bpe(model: &BpeModel) -> Self {
        let mut v = Vocab {
            units: Vec::new(),
            ids: HashMap::new(),
        };
        for u in [BLANK, SOS_EOS, UNK] {
            v.push(u);
        }
        for s in &model.alphabet {
            v.push(s);
        }
        for (a, b) in &model.merges {
            v.push(&format!("{a}{b}"));
        }
        v
    }

    fn push(&mut self, unit: &str) {
        if !self.ids.contains_key(unit) {
            self.ids.insert(unit.to_string(), self.units.len());
            self.units.push(unit.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn id(&self, unit: &str) -> Option<usize> {
        self.ids.get(unit).copied()
    }

    pub fn unit(&self, id: usize) -> Option<&str> {
        self.units.get(id).map(String::as_str)
    }

    pub fn to_tsv(&self) -> String {
        self.units.iter().enumerate().fold(String::new(), |mut s, (i, u)| {
            writeln!(s, "{i}\t{u}").unwrap();
            s
        })
    }

    pub fn from_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut v = Vocab {
            units: Vec::new(),
            ids: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let (id, unit) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `id<TAB>unit`"))?;
            if id.parse::<usize>().ok() != Some(i) || v.ids.contains_key(unit) {
                return Err(Error::parse(origin, i + 1, format!("bad or duplicate entry `{line}`")));
            }
            v.push(unit);
        }
        Ok(v)
    }
}

/// BPE model plus vocabulary: the conversion between words and unit ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pub bpe: BpeModel,
    pub vocab: Vocab,
}

impl Tokenizer {
    pub fn new(bpe: BpeModel) -> Self {
        let vocab = Vocab::from_bpe(&bpe);
        Tokenizer { bpe, vocab }
    }

    pub fn learn(transcripts: &[Vec<String>], num_merges: usize) -> Result<Self> {
        Ok(Self::new(learn_bpe(transcripts, num_merges)?))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words
            .iter()
            .flat_map(|w| self.bpe.segment(w.as_ref()))
            .map(|s| self.vocab.id(&s).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        let mut text = String::new();
        for &id in ids {
            let unit = self.vocab.unit(id).ok_or(Error::UnitOutOfRange {
                id,
                vocab_size: self.vocab.len(),
            })?;
            match id {
                BLANK_ID | SOS_EOS_ID => {}
                _ => text.push_str(unit),
            }
        }
        Ok(text
            .split(END_OF_WORD)
            .filter(|w| !w.is_empty())
            .map(String::from)
            .collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(BpeModel::load(path)?))
    }
}
