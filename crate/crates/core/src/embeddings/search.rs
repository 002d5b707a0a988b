use super::distance::DistanceKind;
use super::vocab::{BOS, PAD};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exhaustive nearest-neighbor search over the rows of a table, with row
/// norms cached for cosine distance. Distances are bitwise identical to
/// [`DistanceKind::distance`].
#[derive(Clone, Debug)]
pub struct NeighborIndex<'a> {
    table: &'a Tensor,
    norms: Vec<f64>,
    kind: DistanceKind,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(table: &'a Tensor, kind: DistanceKind) -> Result<Self> {
        if table.dims2().is_none() {
            return Err(Error::shape("nearest_neighbor", &[table.shape()]));
        }
        let norms = table.rows().map(|r| dot(r, r).sqrt()).collect();
        Ok(NeighborIndex { table, norms, kind })
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn table(&self) -> &Tensor {
        self.table
    }

    fn check_query(&self, query: &[f64]) -> Result<f64> {
        let d = self.table.shape()[1];
        if query.len() != d {
            return Err(Error::shape("nearest_neighbor", &[&[query.len()], self.table.shape()]));
        }
        let qn = dot(query, query).sqrt();
        if self.kind == DistanceKind::Cosine && qn == 0.0 {
            return Err(Error::contract("cosine search with a zero-norm query"));
        }
        Ok(qn)
    }

    fn distance_with_norm(&self, query: &[f64], qn: f64, row: usize) -> Result<f64> {
        let r = self.table.row(row);
        match self.kind {
            DistanceKind::Cosine => {
                let rn = self.norms[row];
                if rn == 0.0 {
                    return Err(Error::contract(format!("cosine search hit zero-norm row {row}")));
                }
                Ok(1.0 - dot(query, r) / (qn * rn))
            }
            kind => kind.distance(query, r),
        }
    }

    /// Distance from `query` to row `row`.
    pub fn distance(&self, query: &[f64], row: usize) -> Result<f64> {
        let qn = self.check_query(query)?;
        self.distance_with_norm(query, qn, row)
    }

    /// Row minimizing the distance among rows accepted by `eligible`; ties
    /// go to the lowest id.
    pub fn argmin_by(&self, query: &[f64], eligible: impl Fn(usize) -> bool) -> Result<(usize, f64)> {
        let qn = self.check_query(query)?;
        let mut best: Option<(usize, f64)> = None;
        for row in (0..self.table.shape()[0]).filter(|&r| eligible(r)) {
            let d = self.distance_with_norm(query, qn, row)?;
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((row, d));
            }
        }
        best.ok_or_else(|| Error::contract("nearest_neighbor: no eligible rows"))
    }

    /// Nearest row; with `exclude_reserved` the `<pad>` and `<s>` rows are
    /// skipped (`<unk>` and `</s>` stay eligible).
    pub fn nearest(&self, query: &[f64], exclude_reserved: bool) -> Result<(usize, f64)> {
        self.argmin_by(query, |r| !(exclude_reserved && (r == PAD || r == BOS)))
    }
}

/// Cosine nearest neighbor of `query` among the rows of `table`.
pub fn nearest_neighbor(query: &[f64], table: &Tensor, exclude_reserved: bool) -> Result<(usize, f64)> {
    NeighborIndex::new(table, DistanceKind::Cosine)?.nearest(query, exclude_reserved)
}
