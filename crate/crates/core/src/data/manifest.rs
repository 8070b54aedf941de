//! Tab-separated dataset manifest.
//!
//! One record per line, columns in this order:
//!
//! ```text
//! path<TAB>split<TAB>label<TAB>domain
//! ```
//!
//! `label` is `-` for unlabeled target images. Lines starting with `#` are
//! comments.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub split: String,
    pub label: Option<usize>,
    pub domain: usize,
}

pub fn render(records: &[ManifestRecord]) -> String {
    let mut out = String::from("# path\tsplit\tlabel\tdomain\n");
    for r in records {
        let label = r.label.map_or_else(|| "-".to_string(), |l| l.to_string());
        writeln!(out, "{}\t{}\t{}\t{}", r.path, r.split, label, r.domain).unwrap();
    }
    out
}

pub fn parse(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let line = line.trim_end_matches(['\n', '\r']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |m: &str| Error::Format {
            offset: start,
            message: format!("manifest record `{line}`: {m}"),
        };
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated columns"));
        }
        let label = match cols[2] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad("label is not an integer"))?),
        };
        let domain = cols[3].parse().map_err(|_| bad("domain is not an integer"))?;
        out.push(ManifestRecord {
            path: cols[0].to_string(),
            split: cols[1].to_string(),
            label,
            domain,
        });
    }
    Ok(out)
}
