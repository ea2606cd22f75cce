//! Binary checkpoint: a versioned text header followed by named parameters
//! stored as little-endian `f64`.
//!
//! ```text
//! CTXASR-CHECKPOINT 1\n
//! meta <single-line json>\n
//! params <count>\n
//! { <name> <ndim> <dim>... \n  <len × 8 bytes LE f64> }*
//! ```

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::tensor::{ParamSet, Tensor};

pub const MAGIC: &str = "CTXASR-CHECKPOINT";
pub const VERSION: u32 = 1;

pub fn to_bytes(meta: &str, ps: &ParamSet) -> Vec<u8> {
    debug_assert!(!meta.contains('\n'));
    let mut out = Vec::with_capacity(ps.num_values() * 8 + 256);
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "meta {meta}").unwrap();
    writeln!(out, "params {}", ps.len()).unwrap();
    for (_, name, t) in ps.iter() {
        write!(out, "{name} {}", t.shape().len()).unwrap();
        for d in t.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push(b'\n');
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<(String, ParamSet)> {
    let mut rd = bytes;
    let mut line_no = 0usize;
    let mut next_line = |rd: &mut &[u8]| -> Result<String> {
        line_no += 1;
        let mut s = String::new();
        rd.read_line(&mut s)
            .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        if !s.ends_with('\n') {
            return Err(Error::parse(origin, line_no, "truncated header"));
        }
        s.pop();
        Ok(s)
    };
    let head = next_line(&mut rd)?;
    let version = head
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| Error::parse(origin, 1, "not a checkpoint file"))?;
    if version != VERSION.to_string() {
        return Err(Error::Incompatible(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let meta = next_line(&mut rd)?
        .strip_prefix("meta ")
        .ok_or_else(|| Error::parse(origin, 2, "missing meta record"))?
        .to_string();
    let count: usize = next_line(&mut rd)?
        .strip_prefix("params ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(origin, 3, "missing parameter count"))?;
    let mut ps = ParamSet::new();
    for i in 0..count {
        let rec = next_line(&mut rd)?;
        let bad = || Error::parse(origin, 4 + i, format!("malformed parameter record `{rec}`"));
        let mut fields = rec.split(' ');
        let name = fields.next().filter(|n| !n.is_empty()).ok_or_else(bad)?;
        let ndim: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let shape: Vec<usize> = fields.map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if shape.len() != ndim {
            return Err(bad());
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        rd.read_exact(&mut raw)
            .map_err(|_| Error::parse(origin, 4 + i, format!("truncated data for `{name}`")))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if ps.id(name).is_some() {
            return Err(Error::parse(origin, 4 + i, format!("duplicate parameter `{name}`")));
        }
        ps.insert(name, Tensor::from_vec(&shape, values)?);
    }
    if !rd.is_empty() {
        return Err(Error::parse(origin, 4 + count, "trailing bytes after last parameter"));
    }
    Ok((meta, ps))
}

pub fn save(path: &Path, meta: &str, ps: &ParamSet) -> Result<()> {
    std::fs::write(path, to_bytes(meta, ps)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(String, ParamSet)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::numcore::tensor::Init;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        ps.add("enc.w", &[3, 4], Init::Uniform(0.1), &mut rng).unwrap();
        ps.add("dec.b", &[7], Init::Uniform(1e-300), &mut rng).unwrap();
        ps.add("scalar", &[], Init::Constant(-0.0), &mut rng).unwrap();
        let bytes = to_bytes("{\"mode\":\"mean\"}", &ps);
        let (meta, back) = from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(meta, "{\"mode\":\"mean\"}");
        assert_eq!(back, ps);
        assert_eq!(to_bytes(&meta, &back), bytes);
    }

    #[test]
    fn truncated_data_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::new();
        ps.add("w", &[4], Init::Uniform(0.1), &mut rng).unwrap();
        let bytes = to_bytes("{}", &ps);
        let err = from_bytes(&bytes[..bytes.len() - 3], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("truncated data for `w`"), "{err}");
    }

    #[test]
    fn wrong_version_is_incompatible() {
        let err = from_bytes(b"CTXASR-CHECKPOINT 9\nmeta {}\nparams 0\n", Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
    }
}
