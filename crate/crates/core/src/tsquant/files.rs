//! Text artifact formats.
//!
//! Token files: one sequence per line of space-separated decimal ids, with
//! `#`-prefixed `key=value` header lines (modality tag, vocab size, and an
//! optional `grid=h,w` for token maps). Bin boundaries and normalization
//! stats: `key = value` records with hex floats for exact round-trips.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hexfloat::{format_hex_f64, parse_hex_f64};
use crate::tsquant::bins::{BinBoundaries, BinMethod};
use crate::tsquant::conv_ae::NormStats;
use crate::tsquant::TokenSequence;

pub fn write_token_file(
    path: &Path,
    sequences: &[TokenSequence],
    extra_headers: &[(&str, String)],
) -> Result<()> {
    let mut out = String::new();
    if let Some(first) = sequences.first() {
        writeln!(out, "# modality={}", first.modality).unwrap();
        writeln!(out, "# vocab={}", first.vocab_size).unwrap();
    }
    for (k, v) in extra_headers {
        writeln!(out, "# {k}={v}").unwrap();
    }
    for seq in sequences {
        let line: Vec<String> = seq.tokens.iter().map(|t| t.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub struct TokenFile {
    pub modality: String,
    pub vocab_size: usize,
    pub headers: Vec<(String, String)>,
    pub sequences: Vec<Vec<u32>>,
}

pub fn read_token_file(path: &Path) -> Result<TokenFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut modality = String::new();
    let mut vocab_size = 0usize;
    let mut headers = Vec::new();
    let mut sequences = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_1 = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            let h = h.trim();
            let (k, v) = h
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: line_1, msg: format!("bad header {h:?}") })?;
            match k {
                "modality" => modality = v.to_string(),
                "vocab" => {
                    vocab_size = v
                        .parse()
                        .map_err(|_| Error::Parse { line: line_1, msg: format!("bad vocab {v:?}") })?
                }
                _ => headers.push((k.to_string(), v.to_string())),
            }
            continue;
        }
        let mut seq = Vec::new();
        for tok in line.split_ascii_whitespace() {
            let t: u32 = tok
                .parse()
                .map_err(|_| Error::Parse { line: line_1, msg: format!("bad token {tok:?}") })?;
            if vocab_size > 0 && t as usize >= vocab_size {
                return Err(Error::InvalidToken { token: t, vocab: vocab_size });
            }
            seq.push(t);
        }
        sequences.push(seq);
    }
    Ok(TokenFile { modality, vocab_size, headers, sequences })
}

pub fn write_bins(path: &Path, bins: &BinBoundaries) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "method = {}", bins.method.as_str()).unwrap();
    writeln!(out, "tokens = {}", bins.token_count()).unwrap();
    for (j, e) in bins.edges.iter().enumerate() {
        writeln!(out, "edge_{j} = {}", format_hex_f64(*e)).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_bins(path: &Path) -> Result<BinBoundaries> {
    let records = read_kv_records(path)?;
    let get = |key: &str| -> Result<&str> {
        records
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing key {key}") })
    };
    let method = match get("method")? {
        "uniform" => BinMethod::Uniform,
        "quantile" => BinMethod::Quantile,
        other => return Err(Error::Parse { line: 0, msg: format!("unknown method {other:?}") }),
    };
    let t: usize = get("tokens")?
        .parse()
        .map_err(|_| Error::Parse { line: 0, msg: "bad token count".into() })?;
    let mut edges = Vec::with_capacity(t + 1);
    for j in 0..=t {
        edges.push(parse_hex_f64(get(&format!("edge_{j}"))?)?);
    }
    Ok(BinBoundaries { method, edges })
}

pub fn write_norm_stats(path: &Path, stats: &NormStats) -> Result<()> {
    let out = format!(
        "mean = {}\nstd = {}\n",
        format_hex_f64(stats.mean),
        format_hex_f64(stats.std)
    );
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_norm_stats(path: &Path) -> Result<NormStats> {
    let records = read_kv_records(path)?;
    let get = |key: &str| -> Result<f64> {
        let v = records
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing key {key}") })?;
        parse_hex_f64(v)
    };
    Ok(NormStats { mean: get("mean")?, std: get("std")? })
}

/// Reads `key = value` lines, skipping blanks and `#` comments.
/// Returns `(key, value, line number)` triples in file order.
pub fn read_kv_records(path: &Path) -> Result<Vec<(String, String, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv_text(&text)
}

pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_1 = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: line_1, msg: format!("expected key = value, got {line:?}") })?;
        out.push((k.trim().to_string(), v.trim().to_string(), line_1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsquant::bins::fit_bins;

    #[test]
    fn token_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.txt");
        let seqs = vec![
            TokenSequence::new(vec![1, 2, 3], "temp-hourly", 504).unwrap(),
            TokenSequence::new(vec![500, 0], "temp-hourly", 504).unwrap(),
        ];
        write_token_file(&path, &seqs, &[("grid", "4,4".to_string())]).unwrap();
        let back = read_token_file(&path).unwrap();
        assert_eq!(back.modality, "temp-hourly");
        assert_eq!(back.vocab_size, 504);
        assert_eq!(back.sequences, vec![vec![1, 2, 3], vec![500, 0]]);
        assert_eq!(back.headers, vec![("grid".to_string(), "4,4".to_string())]);
    }

    #[test]
    fn token_file_rejects_out_of_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "# modality=m\n# vocab=4\n1 2 9\n").unwrap();
        assert!(read_token_file(&path).is_err());
    }

    #[test]
    fn bins_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bins.txt");
        let data: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7231).sin() * 3.7).collect();
        let bins = fit_bins(&data, BinMethod::Quantile, 16).unwrap();
        write_bins(&path, &bins).unwrap();
        let back = read_bins(&path).unwrap();
        assert_eq!(back.method, bins.method);
        for (a, b) in back.edges.iter().zip(&bins.edges) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn kv_parse_error_carries_line() {
        let err = parse_kv_text("a = 1\nnot a record\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }
}
