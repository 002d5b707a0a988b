//! Per-image feature vectors.
//!
//! Binary layout (`MMVF`): the magic bytes, `count` and `dim` as
//! little-endian `u32`, then `count × dim` little-endian `f32` values in row
//! order. Paths ending in `.csv` hold one comma-separated row per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_FEATURE_DIM: usize = 2048;
const MAGIC: &[u8; 4] = b"MMVF";

/// `num_images × F` feature matrix plus the subtracted training centroid,
/// when debiasing has been applied.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatureSet {
    features: Tensor,
    centroid: Option<Vec<f64>>,
}

impl VisualFeatureSet {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.dims2().is_none() {
            return Err(Error::shape("visual features", &[features.shape()]));
        }
        if !features.is_finite() {
            return Err(Error::Format("visual features contain non-finite values".into()));
        }
        Ok(VisualFeatureSet {
            features,
            centroid: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn centroid(&self) -> Option<&[f64]> {
        self.centroid.as_deref()
    }

    /// Stacks rows `ids` into a `[ids.len(), F]` tensor.
    pub fn gather(&self, ids: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(ids.len() * self.dim());
        for &i in ids {
            if i >= self.len() {
                return Err(Error::contract(format!("image index {i} out of range for {} rows", self.len())));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![ids.len(), self.dim()], data)
    }

    /// Subtracts the mean of the `train_indexes` rows from every row.
    pub fn debias(&self, train_indexes: &[usize]) -> Result<Self> {
        if train_indexes.is_empty() {
            return Err(Error::contract("visual debiasing needs at least one training row"));
        }
        let mut centroid = vec![0.0; self.dim()];
        for &i in train_indexes {
            if i >= self.len() {
                return Err(Error::contract(format!("image index {i} out of range for {} rows", self.len())));
            }
            centroid.iter_mut().zip(self.row(i)).for_each(|(c, x)| *c += x);
        }
        centroid.iter_mut().for_each(|c| *c /= train_indexes.len() as f64);
        let mut features = self.features.clone();
        for r in 0..self.len() {
            features.row_mut(r).iter_mut().zip(&centroid).for_each(|(x, c)| *x -= c);
        }
        Ok(VisualFeatureSet {
            features,
            centroid: Some(centroid),
        })
    }
}

/// Centroid debiasing computed over the training rows, applied to all rows.
pub fn debias_visual(features: &VisualFeatureSet, train_indexes: &[usize]) -> Result<VisualFeatureSet> {
    features.debias(train_indexes)
}

pub fn read_mmvf<R: Read>(mut r: R) -> Result<VisualFeatureSet> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated visual feature header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("not a visual feature file (bad magic)".into()));
    }
    let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if count == 0 || dim == 0 {
        return Err(Error::Format(format!("invalid feature header count={count} dim={dim}")));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * dim * 4 {
        return Err(Error::Format(format!(
            "header declares {count}×{dim} values but the payload holds {} bytes",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    VisualFeatureSet::new(Tensor::new(vec![count, dim], data)?)
}

/// Values are narrowed to `f32`.
pub fn write_mmvf<W: Write>(mut w: W, set: &VisualFeatureSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(set.len() as u32).to_le_bytes())?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    for &x in set.features.data() {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<R: BufRead>(r: R) -> Result<VisualFeatureSet> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        if rows.first().is_some_and(|f| f.len() != row.len()) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {} values, found {}", rows[0].len(), row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty visual feature file".into()));
    }
    VisualFeatureSet::new(Tensor::from_rows(&rows)?)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn load_visual_features(path: impl AsRef<Path>) -> Result<VisualFeatureSet> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_csv(file)
    } else {
        read_mmvf(file)
    }
}

pub fn save_visual_features(path: impl AsRef<Path>, set: &VisualFeatureSet) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        for row in set.features.rows() {
            let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    } else {
        write_mmvf(w, set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[Vec<f64>]) -> VisualFeatureSet {
        VisualFeatureSet::new(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn header_and_payload() {
        let mut bytes = b"MMVF".to_vec();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(4u32.to_le_bytes());
        for i in 0..8 {
            bytes.extend((i as f32).to_le_bytes());
        }
        let s = read_mmvf(bytes.as_slice()).unwrap();
        assert_eq!((s.len(), s.dim()), (2, 4));
        assert_eq!(s.row(1), &[4.0, 5.0, 6.0, 7.0]);
        bytes.pop();
        assert!(matches!(read_mmvf(bytes.as_slice()), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(read_mmvf(bytes.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let s = set(&[vec![0.1f32 as f64, -3.25], vec![1e-7f32 as f64, 42.0]]);
        let mut buf = Vec::new();
        write_mmvf(&mut buf, &s).unwrap();
        let back = read_mmvf(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        let mut again = Vec::new();
        write_mmvf(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn csv_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let s = set(&[vec![1.5, 2.0], vec![-1.0, 0.25]]);
        save_visual_features(&p, &s).unwrap();
        assert_eq!(load_visual_features(&p).unwrap(), s);
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(load_visual_features(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn centroid_from_training_rows_only() {
        let s = set(&[vec![1.0, 1.0], vec![3.0, 3.0], vec![10.0, 0.0]]);
        let d = debias_visual(&s, &[0, 1]).unwrap();
        assert_eq!(d.centroid(), Some(&[2.0, 2.0][..]));
        assert_eq!(d.row(0), &[-1.0, -1.0]);
        assert_eq!(d.row(2), &[8.0, -2.0]);
        assert!(s.centroid().is_none());
        assert!(debias_visual(&s, &[]).is_err());
    }
}
