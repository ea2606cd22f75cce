//! Word error rate by minimum edit distance.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WerStats {
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    pub ref_len: usize,
    pub wer: f64,
    /// The reference was empty; `wer` uses a denominator of 1.
    pub empty_ref: bool,
}

impl WerStats {
    pub fn errors(&self) -> usize {
        self.subs + self.ins + self.dels
    }

    /// Pools counts over utterances.
    pub fn pooled(stats: &[WerStats]) -> WerStats {
        let mut t = WerStats::default();
        for s in stats {
            t.subs += s.subs;
            t.ins += s.ins;
            t.dels += s.dels;
            t.ref_len += s.ref_len;
            t.empty_ref |= s.empty_ref;
        }
        t.wer = t.errors() as f64 / t.ref_len.max(1) as f64;
        t
    }
}

/// Unit-cost alignment. Among minimal alignments the one with the most
/// substitutions wins.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> WerStats {
    let (n, m) = (reference.len(), hypothesis.len());
    // (edits, ins + dels, subs, ins, dels)
    type Cell = (usize, usize, usize, usize, usize);
    let mut prev: Vec<Cell> = (0..=m).map(|j| (j, j, 0, j, 0)).collect();
    for i in 1..=n {
        let mut cur: Vec<Cell> = vec![(i, i, 0, 0, i)];
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let d = prev[j - 1];
            let diag = if same { d } else { (d.0 + 1, d.1, d.2 + 1, d.3, d.4) };
            let u = prev[j];
            let del = (u.0 + 1, u.1 + 1, u.2, u.3, u.4 + 1);
            let l = cur[j - 1];
            let ins = (l.0 + 1, l.1 + 1, l.2, l.3 + 1, l.4);
            let best = [diag, del, ins].into_iter().min_by_key(|c| (c.0, c.1)).unwrap_or(diag);
            cur.push(best);
        }
        prev = cur;
    }
    let (_, _, subs, ins, dels) = prev[m];
    WerStats {
        subs,
        ins,
        dels,
        ref_len: n,
        wer: (subs + ins + dels) as f64 / n.max(1) as f64,
        empty_ref: n == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_is_zero() {
        assert_eq!(wer(&w("a b c"), &w("a b c")).wer, 0.0);
    }

    #[test]
    fn substitution_and_insertion() {
        let s = wer(&w("a b c"), &w("a x c d"));
        assert_eq!((s.subs, s.ins, s.dels), (1, 1, 0));
        assert!((s.wer - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn full_deletion() {
        let s = wer(&w("a"), &w(""));
        assert_eq!((s.dels, s.wer), (1, 1.0));
    }

    #[test]
    fn empty_reference_is_flagged() {
        let s = wer(&w(""), &w("x y"));
        assert!(s.empty_ref);
        assert_eq!((s.ins, s.wer), (2, 2.0));
    }

    #[test]
    fn prefers_substitution() {
        let s = wer(&w("a"), &w("b"));
        assert_eq!((s.subs, s.ins, s.dels), (1, 0, 0));
    }
}
