//! CSV tables and SVG bar charts of decoding and perplexity results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const WER_HEADER: &str = "mode,context_source,split,wer,subs,ins,dels,seed";
pub const PPL_HEADER: &str = "lm,split,ppl,seed";
/// First line of every WER table.
pub const PENALTY_NOTE: &str = "# length penalty: additive, +penalty per emitted unit (eos excluded)";

#[derive(Debug, Clone, PartialEq)]
pub struct WerRow {
    pub mode: String,
    pub context_source: String,
    pub split: String,
    pub wer: f64,
    pub subs: usize,
    pub ins: usize,
    pub dels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PplRow {
    pub lm: String,
    pub split: String,
    pub ppl: f64,
    pub seed: u64,
}

pub fn wer_csv(rows: &[WerRow]) -> String {
    let mut s = format!("{PENALTY_NOTE}\n{WER_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{},{},{}",
            r.mode, r.context_source, r.split, r.wer, r.subs, r.ins, r.dels, r.seed
        );
    }
    s
}

pub fn ppl_csv(rows: &[PplRow]) -> String {
    let mut s = format!("{PPL_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{}", r.lm, r.split, r.ppl, r.seed);
    }
    s
}

fn data_lines<'a>(text: &'a str, header: &str, origin: &Path) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((i, _)) => return Err(Error::parse(origin, i + 1, format!("expected header `{header}`"))),
        None => return Ok(Vec::new()),
    }
    Ok(lines.map(|(i, l)| (i + 1, l.split(',').collect())).collect())
}

fn field<T: std::str::FromStr>(v: &str, origin: &Path, line: usize) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(origin, line, format!("bad value `{v}`")))
}

pub fn parse_wer_csv(text: &str, origin: &Path) -> Result<Vec<WerRow>> {
    data_lines(text, WER_HEADER, origin)?
        .into_iter()
        .map(|(n, f)| {
            if f.len() != 8 {
                return Err(Error::parse(origin, n, "expected 8 columns"));
            }
            Ok(WerRow {
                mode: f[0].to_string(),
                context_source: f[1].to_string(),
                split: f[2].to_string(),
                wer: field(f[3], origin, n)?,
                subs: field(f[4], origin, n)?,
                ins: field(f[5], origin, n)?,
                dels: field(f[6], origin, n)?,
                seed: field(f[7], origin, n)?,
            })
        })
        .collect()
}

pub fn parse_ppl_csv(text: &str, origin: &Path) -> Result<Vec<PplRow>> {
    data_lines(text, PPL_HEADER, origin)?
        .into_iter()
        .map(|(n, f)| {
            if f.len() != 4 {
                return Err(Error::parse(origin, n, "expected 4 columns"));
            }
            Ok(PplRow {
                lm: f[0].to_string(),
                split: f[1].to_string(),
                ppl: field(f[2], origin, n)?,
                seed: field(f[3], origin, n)?,
            })
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Median over seeds, keyed by label.
fn medians<'a>(items: impl Iterator<Item = (String, f64)> + 'a) -> Vec<(String, f64)> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (k, v) in items {
        groups.entry(k).or_default().push(v);
    }
    groups
        .into_iter()
        .filter_map(|(k, mut v)| median(&mut v).map(|m| (k, m)))
        .collect()
}

fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (w, h, left, bottom, top) = (640.0, 360.0, 60.0, 80.0, 40.0);
    let plot_h = h - bottom - top;
    let max = bars.iter().map(|b| b.1).fold(0.0_f64, f64::max).max(1e-9);
    let slot = (w - left - 20.0) / bars.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{y_label}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#000"/>"##,
        h - bottom,
        w - 20.0,
        h - bottom
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let bh = plot_h * v / max;
        let x = left + slot * i as f64 + slot * 0.15;
        let y = h - bottom - bh;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{bh:.1}" fill="#4a78b0"/>"##,
            slot * 0.7
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.4}</text>"#,
            x + slot * 0.35,
            y - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-35 {:.1} {:.1})">{label}</text>"#,
            x + slot * 0.35,
            h - bottom + 14.0,
            x + slot * 0.35,
            h - bottom + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn wer_chart(rows: &[WerRow]) -> String {
    let bars = medians(rows.iter().map(|r| (format!("{}/{}", r.mode, r.context_source), r.wer)));
    bar_chart("Median WER by context source", "WER", &bars)
}

pub fn ppl_chart(rows: &[PplRow]) -> String {
    let bars = medians(rows.iter().map(|r| (r.lm.clone(), r.ppl)));
    bar_chart("Median held-out perplexity by LM", "perplexity", &bars)
}

/// Writes `wer.csv`, `perplexity.csv` and their charts into `out_dir`.
pub fn emit_report(wer_rows: &[WerRow], ppl_rows: &[PplRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = [
        ("wer.csv", wer_csv(wer_rows)),
        ("perplexity.csv", ppl_csv(ppl_rows)),
        ("wer_by_context.svg", wer_chart(wer_rows)),
        ("perplexity.svg", ppl_chart(ppl_rows)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}
