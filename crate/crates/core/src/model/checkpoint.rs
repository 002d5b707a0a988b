//! Model container.
//!
//! Layout (integers little-endian): `MMCK`, `u32` version, `u32`-prefixed
//! canonical JSON of the [`ModelConfig`], the source then target vocabulary
//! (`u32` count, then per token a `u32`-prefixed UTF-8 string and a `u64`
//! frequency), then `u32` parameter count and per parameter a
//! `u32`-prefixed name, `u32` rank, `u32` dims and `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, Seq2Seq};
use crate::autodiff::{ParamStore, Tensor};
use crate::canonical::canonical_json;
use crate::embeddings::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MMCK";
pub const CHECKPOINT_VERSION: u32 = 1;
// guards against allocating from a corrupt length field
const MAX_FIELD: usize = 1 << 31;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_vocab<W: Write>(w: &mut W, v: &Vocabulary) -> Result<()> {
    put_u32(w, v.len())?;
    for (tok, &f) in v.tokens().iter().zip(v.frequencies()) {
        put_str(w, tok)?;
        w.write_all(&f.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Seq2Seq) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_str(&mut w, &canonical_json(model.config())?)?;
    put_vocab(&mut w, model.src_vocab())?;
    put_vocab(&mut w, model.tgt_vocab())?;
    put_u32(&mut w, model.store().len())?;
    for (_, p) in model.store().iter() {
        put_str(&mut w, p.name())?;
        put_u32(&mut w, p.value().shape().len())?;
        for &d in p.value().shape() {
            put_u32(&mut w, d)?;
        }
        for &x in p.value().data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        if n > MAX_FIELD {
            return Err(Error::Format("implausible field length".into()));
        }
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("truncated checkpoint".into()))?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }

    fn vocab(&mut self) -> Result<Vocabulary> {
        let n = self.u32()?;
        let (mut tokens, mut freqs) = (Vec::new(), Vec::new());
        for _ in 0..n {
            tokens.push(self.string()?);
            freqs.push(u64::from_le_bytes(self.array()?));
        }
        Vocabulary::from_parts(tokens, freqs)
    }
}

pub fn read_checkpoint<R: Read>(inner: R) -> Result<Seq2Seq> {
    let mut r = Reader { inner };
    if &r.array::<4>()? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config: ModelConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let src_vocab = r.vocab()?;
    let tgt_vocab = r.vocab()?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.filter(|&n| n <= MAX_FIELD / 8).ok_or_else(|| Error::Format("implausible tensor shape".into()))?;
        let data = r
            .bytes(numel * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let value = Tensor::new(shape, data).map_err(|e| Error::Format(format!("parameter {name}: {e}")))?;
        store.add(name, value, true)?;
    }
    Seq2Seq::from_store(config, src_vocab, tgt_vocab, store)
}

pub fn save_checkpoint(model: &Seq2Seq, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Seq2Seq> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{toy, toy_config};
    use super::*;

    #[test]
    fn save_load_save_is_identical() {
        let m = toy(toy_config());
        let mut a = Vec::new();
        write_checkpoint(&mut a, &m).unwrap();
        let back = read_checkpoint(a.as_slice()).unwrap();
        let mut b = Vec::new();
        write_checkpoint(&mut b, &back).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.config(), m.config());
        assert_eq!(back.tgt_vocab(), m.tgt_vocab());
        for ((_, p), (_, q)) in m.store().iter().zip(back.store().iter()) {
            assert_eq!(p.value(), q.value());
            assert_eq!(p.trainable(), q.trainable());
        }
        let src = ["w3", "w1", "w7"];
        assert_eq!(m.translate(&src, 8).unwrap(), back.translate(&src, 8).unwrap());
    }

    #[test]
    fn bad_magic_and_version() {
        let m = toy(toy_config());
        let mut a = Vec::new();
        write_checkpoint(&mut a, &m).unwrap();
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = a.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_checkpoint(&a[..a.len() - 3]), Err(Error::Format(_))));
    }
}
