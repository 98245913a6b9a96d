//! Datasets and the svmlight sparse text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Svmlight,
    Synthetic,
}

/// Unlabelled data, one point per column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: DMatrix<f64>,
    pub source_format: SourceFormat,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.features.ncols() == 0
    }

    /// Columns `idx` of the feature matrix.
    pub fn select(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), idx.len(), |r, c| self.features[(r, idx[c])])
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses svmlight text; a leading token without `:` is a label and is dropped.
pub fn parse_svmlight_str(text: &str, name: &str) -> Result<Dataset> {
    let mut rows: Vec<BTreeMap<usize, f64>> = Vec::new();
    let mut dim = 0;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut entries = BTreeMap::new();
        for (t, token) in content.split_whitespace().enumerate() {
            let Some((idx, val)) = token.split_once(':') else {
                if t == 0 {
                    continue;
                }
                return Err(parse_err(line_no, format!("expected index:value, found '{token}'")));
            };
            let idx: i64 = idx
                .parse()
                .map_err(|_| parse_err(line_no, format!("feature index '{idx}' is not an integer")))?;
            if idx <= 0 {
                return Err(parse_err(line_no, format!("feature index {idx} must be at least 1")));
            }
            let v: f64 = val
                .parse()
                .map_err(|_| parse_err(line_no, format!("value '{val}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("value '{val}' is not finite")));
            }
            if entries.insert(idx as usize, v).is_some() {
                return Err(parse_err(line_no, format!("feature index {idx} repeated")));
            }
            dim = dim.max(idx as usize);
        }
        rows.push(entries);
    }
    let mut features = DMatrix::zeros(dim, rows.len());
    for (c, entries) in rows.iter().enumerate() {
        for (&i, &v) in entries {
            features[(i - 1, c)] = v;
        }
    }
    Ok(Dataset {
        name: name.to_string(),
        features,
        source_format: SourceFormat::Svmlight,
    })
}

pub fn parse_svmlight(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_svmlight_str(&text, &name)
}

/// Writes each column as a line with label `0`; the last feature is always written so the
/// dimension survives a round trip.
pub fn format_svmlight(features: &DMatrix<f64>) -> String {
    let dim = features.nrows();
    let mut out = String::new();
    for col in features.column_iter() {
        out.push('0');
        for (i, v) in col.iter().enumerate() {
            if v.to_bits() != 0 || i + 1 == dim {
                let _ = write!(out, " {}:{}", i + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_svmlight(features: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_svmlight(features))?;
    Ok(())
}
