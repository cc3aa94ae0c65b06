//! Plain-text feature tables.
//!
//! ```text
//! #features v1 D=3
//! a,dom1,0,,1.0,0.0,0.0
//! b,dom1,1,print,0.0,1.0,0.0
//! ```
//!
//! Columns are `id,domain,label,attack,v0..v{D-1}`. Blank lines and lines
//! starting with `#` after the header are ignored. Floats are written with 17
//! significant digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{FeatureRecord, FeatureSet, Label};
use crate::error::{Error, Result};

pub const HEADER_TAG: &str = "#features";

pub fn load_feature_table(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_table(&text, path)
}

pub fn parse_feature_table(text: &str, path: &Path) -> Result<FeatureSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "missing `#features v1 D=<int>` header".into()))?;
    let dim = parse_header(header, HEADER_TAG, &["D"])
        .map_err(|m| err(1, m))?
        .remove(0)
        .1;
    let dim: usize = dim
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| err(1, format!("invalid dimension `{dim}`")))?;

    let mut records = Vec::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 4 {
            return Err(err(lineno, format!("expected at least 4 columns, found {}", cols.len())));
        }
        let label = match cols[2].trim() {
            "0" => Label::BonaFide,
            "1" => Label::Spoof,
            other => return Err(err(lineno, format!("label must be 0 or 1, found `{other}`"))),
        };
        let values = &cols[4..];
        if values.len() != dim {
            return Err(err(
                lineno,
                format!("expected {} columns (D={dim}), found {}", dim + 4, cols.len()),
            ));
        }
        let vector = values
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| err(lineno, format!("non-numeric value `{}`", v.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        let rec = FeatureRecord::new(cols[0].trim(), cols[1].trim(), label, cols[3].trim(), vector)
            .map_err(|e| err(lineno, e.to_string()))?;
        records.push(rec);
    }
    FeatureSet::new(dim, records)
}

pub fn write_feature_table(set: &FeatureSet) -> String {
    let mut out = format!("{HEADER_TAG} v1 D={}\n", set.dimension());
    for r in set {
        let _ = write!(out, "{},{},{},{}", r.id, r.domain, r.label.index(), r.attack);
        for v in &r.vector {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn save_feature_table(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_feature_table(set)).map_err(|e| Error::io(path, e))
}

/// 17 significant digits in scientific notation.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses `<tag> v1 k1=.. k2=..`, returning the values for `keys` in order.
pub(crate) fn parse_header(
    line: &str,
    tag: &str,
    keys: &[&str],
) -> std::result::Result<Vec<(String, String)>, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(format!("expected header starting with `{tag}`"));
    }
    if parts.next() != Some("v1") {
        return Err("unsupported format version (expected v1)".into());
    }
    let fields: Vec<(&str, &str)> = parts.filter_map(|p| p.split_once('=')).collect();
    keys.iter()
        .map(|k| {
            fields
                .iter()
                .find(|(name, _)| name == k)
                .map(|(n, v)| (n.to_string(), v.to_string()))
                .ok_or_else(|| format!("header is missing `{k}=`"))
        })
        .collect()
}
