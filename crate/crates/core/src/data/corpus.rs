use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::preprocess_text;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Aligned tokenized sentence pairs, optionally with one image row per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelCorpus {
    split: Split,
    source: Vec<Vec<String>>,
    target: Vec<Vec<String>>,
    images: Option<Vec<usize>>,
}

impl ParallelCorpus {
    pub fn new(
        split: Split,
        source: Vec<Vec<String>>,
        target: Vec<Vec<String>>,
        images: Option<Vec<usize>>,
    ) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::contract(format!(
                "{} source sentences but {} target sentences",
                source.len(),
                target.len()
            )));
        }
        if let Some(img) = &images {
            if img.len() != source.len() {
                return Err(Error::contract(format!(
                    "{} image indexes for {} sentence pairs",
                    img.len(),
                    source.len()
                )));
            }
        }
        Ok(ParallelCorpus {
            split,
            source,
            target,
            images,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[Vec<String>] {
        &self.source
    }

    pub fn target(&self) -> &[Vec<String>] {
        &self.target
    }

    pub fn images(&self) -> Option<&[usize]> {
        self.images.as_deref()
    }

    /// Copy without the image indexes (text-only training).
    pub fn without_images(&self) -> Self {
        ParallelCorpus {
            images: None,
            ..self.clone()
        }
    }

    /// Checks that every image index addresses one of `feature_rows` rows.
    pub fn check_images(&self, feature_rows: usize) -> Result<()> {
        match self.images.iter().flatten().find(|&&i| i >= feature_rows) {
            Some(bad) => Err(Error::contract(format!(
                "image index {bad} out of range for {feature_rows} feature rows"
            ))),
            None => Ok(()),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    BufReader::new(File::open(path)?)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(Error::from)
}

/// Reads one integer per line.
pub fn load_image_index(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read_lines(path.as_ref())?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("image index: {e}"),
            })
        })
        .collect()
}

/// Reads and preprocesses line-aligned parallel files. Pairs whose source
/// side is empty after preprocessing are dropped with a warning, since the
/// encoder needs at least one token.
pub fn load_parallel_text(
    source: impl AsRef<Path>,
    target: impl AsRef<Path>,
    images: Option<&Path>,
    split: Split,
) -> Result<ParallelCorpus> {
    let src_lines = read_lines(source.as_ref())?;
    let tgt_lines = read_lines(target.as_ref())?;
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Format(format!(
            "{} has {} lines but {} has {}",
            source.as_ref().display(),
            src_lines.len(),
            target.as_ref().display(),
            tgt_lines.len()
        )));
    }
    let index = images.map(load_image_index).transpose()?;
    if let Some(idx) = &index {
        if idx.len() != src_lines.len() {
            return Err(Error::Format(format!(
                "image index has {} lines for {} sentence pairs",
                idx.len(),
                src_lines.len()
            )));
        }
    }

    let (mut src, mut tgt, mut img) = (Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0;
    for (i, (s, t)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let s = preprocess_text(s);
        if s.is_empty() {
            dropped += 1;
            continue;
        }
        src.push(s);
        tgt.push(preprocess_text(t));
        if let Some(idx) = &index {
            img.push(idx[i]);
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} pairs with an empty source sentence");
    }
    ParallelCorpus::new(split, src, tgt, index.map(|_| img))
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = String> + 'a) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the corpus as space-joined token lines (and an image index file
/// when the corpus has images and `images` is given).
pub fn save_parallel_text(
    corpus: &ParallelCorpus,
    source: impl AsRef<Path>,
    target: impl AsRef<Path>,
    images: Option<&Path>,
) -> Result<()> {
    write_lines(source.as_ref(), corpus.source.iter().map(|s| s.join(" ")))?;
    write_lines(target.as_ref(), corpus.target.iter().map(|s| s.join(" ")))?;
    if let (Some(path), Some(idx)) = (images, &corpus.images) {
        write_lines(path, idx.iter().map(usize::to_string))?;
    }
    Ok(())
}

/// Preprocesses every line of a monolingual file.
pub fn load_text(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path.as_ref())?.iter().map(|l| preprocess_text(l)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_skips_empty_sources() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t, i) = (dir.path().join("s"), dir.path().join("t"), dir.path().join("i"));
        std::fs::write(&s, "Un chat.\n\nDeux chiens\n").unwrap();
        std::fs::write(&t, "A cat.\nnothing\nTwo dogs\n").unwrap();
        std::fs::write(&i, "4\n5\n6\n").unwrap();
        let c = load_parallel_text(&s, &t, Some(&i), Split::Train).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.target()[1], ["two", "dogs"]);
        assert_eq!(c.images(), Some(&[4, 6][..]));
    }

    #[test]
    fn misaligned_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t) = (dir.path().join("s"), dir.path().join("t"));
        std::fs::write(&s, "a\nb\n").unwrap();
        std::fs::write(&t, "a\n").unwrap();
        assert!(matches!(load_parallel_text(&s, &t, None, Split::Val), Err(Error::Format(_))));
    }

    #[test]
    fn bad_image_index_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i");
        std::fs::write(&p, "1\nx\n").unwrap();
        assert!(matches!(load_image_index(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ParallelCorpus::new(
            Split::Test,
            vec![vec!["x1".into(), "x2".into()]],
            vec![vec!["y1".into()]],
            Some(vec![3]),
        )
        .unwrap();
        let p = |n: &str| dir.path().join(n);
        save_parallel_text(&c, p("s"), p("t"), Some(&p("i"))).unwrap();
        let back = load_parallel_text(p("s"), p("t"), Some(&p("i")), Split::Test).unwrap();
        assert_eq!(back, c);
        assert!(c.check_images(3).is_err());
        assert!(c.check_images(4).is_ok());
    }
}
