use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::graph::Vocab;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    RelationalEntity,
    RelationalRelation,
    SemanticEntity,
}

/// One row per vocabulary id, stored as a `[n, dim]` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub kind: EmbeddingKind,
    pub matrix: Tensor,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Arranges named rows in vocabulary order. Rows for names outside the
    /// vocabulary are ignored; a vocabulary name without a row is an error.
    pub fn from_named_rows(kind: EmbeddingKind, vocab: &Vocab, rows: &[(String, Vec<f64>)]) -> Result<Self> {
        let by_name: HashMap<&str, &[f64]> = rows.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
        let mut ordered = Vec::with_capacity(vocab.len());
        for name in vocab.names() {
            let row = by_name.get(name.as_str()).ok_or_else(|| Error::UnknownName {
                kind: "embedding row",
                name: name.clone(),
            })?;
            ordered.push(*row);
        }
        Ok(Self {
            kind,
            matrix: Tensor::from_rows(&ordered)?,
        })
    }
}

/// Parses `name v1 v2 ...` lines; every row must have the same width.
pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(name) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|e| parse_err(i + 1, format!("bad value {p:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(parse_err(i + 1, "row has no values".into()));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(i + 1, format!("expected {d} values, got {}", values.len())));
            }
            _ => {}
        }
        rows.push((name.to_string(), values));
    }
    Ok(rows)
}

pub fn format_embedding_rows<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = String::new();
    for (name, values) in rows {
        out.push_str(name);
        for v in values {
            write!(out, " {v}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn write_embedding_file(path: impl AsRef<Path>, names: &[String], matrix: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let text = format_embedding_rows(names.iter().enumerate().map(|(i, n)| (n.as_str(), matrix.row(i))));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
