//! Plain-text word vector files: an optional `<count> <dim>` header, then
//! one `<token> <f1> ... <fD>` line per word.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 300;

/// Pretrained vectors keyed by surface token, in file order.
#[derive(Clone, Debug, Default)]
pub struct WordVectors {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    duplicates: usize,
}

impl WordVectors {
    pub fn new(dim: usize) -> Self {
        WordVectors {
            dim,
            ..Default::default()
        }
    }

    /// Adds an entry; later duplicates of a token are ignored and counted.
    pub fn insert(&mut self, token: String, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape("word vector", &[&[self.dim], &[vector.len()]]));
        }
        if self.index.contains_key(&token) {
            self.duplicates += 1;
            return Ok(());
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of repeated tokens skipped while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.tokens
            .iter()
            .zip(&self.vectors)
            .map(|(t, v)| (t.as_str(), v.as_slice()))
    }
}

fn is_header(fields: &[&str]) -> bool {
    fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok())
}

/// Parses word vectors. With `expected_dim = None` the dimension is taken
/// from the first data line.
pub fn parse_word_vectors<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<WordVectors> {
    let mut out: Option<WordVectors> = expected_dim.map(WordVectors::new);
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && is_header(&fields) {
            continue;
        }
        let dim = fields.len() - 1;
        let table = out.get_or_insert_with(|| WordVectors::new(dim));
        if dim != table.dim || dim == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} values, found {dim}", table.dim),
            });
        }
        let vector = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: "non-finite value".into(),
            });
        }
        table.insert(fields[0].to_string(), vector)?;
    }
    match out {
        Some(t) if !t.is_empty() => {
            if t.duplicates > 0 {
                log::warn!("{} duplicate tokens ignored in word vectors", t.duplicates);
            }
            Ok(t)
        }
        _ => Err(Error::Parse {
            line: 0,
            message: "no word vectors found".into(),
        }),
    }
}

pub fn load_word_vectors(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<WordVectors> {
    parse_word_vectors(BufReader::new(File::open(path)?), expected_dim)
}

/// Writes a header and one line per row with 9 significant digits.
pub fn write_word_vectors<W: Write, S: AsRef<str>>(mut w: W, tokens: &[S], rows: &[&[f64]]) -> Result<()> {
    if tokens.len() != rows.len() {
        return Err(Error::contract("token and row counts differ"));
    }
    let dim = rows.first().map_or(0, |r| r.len());
    writeln!(w, "{} {}", tokens.len(), dim)?;
    for (tok, row) in tokens.iter().zip(rows) {
        write!(w, "{}", tok.as_ref())?;
        for v in row.iter() {
            write!(w, " {v:.8e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_word_vectors<S: AsRef<str>>(path: impl AsRef<Path>, tokens: &[S], rows: &[&[f64]]) -> Result<()> {
    write_word_vectors(BufWriter::new(File::create(path)?), tokens, rows)
}
