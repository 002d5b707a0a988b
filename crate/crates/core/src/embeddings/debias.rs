//! All-but-the-top postprocessing: remove the mean vector, then remove each
//! row's projection onto the top `k` principal directions.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 5;

/// Statistics removed by [`debias_all_but_top`].
#[derive(Clone, Debug, PartialEq)]
pub struct DebiasReport {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, strongest first.
    pub directions: Vec<Vec<f64>>,
    /// Covariance eigenvalue (divisor `n − 1`) of each direction.
    pub explained_variance: Vec<f64>,
    pub rows_used: usize,
}

impl DebiasReport {
    /// Re-applies this report's mean and directions to `matrix`, leaving
    /// `skip_rows` untouched.
    pub fn apply(&self, matrix: &Tensor, skip_rows: &[usize]) -> Result<Tensor> {
        let (v, d) = matrix
            .dims2()
            .ok_or_else(|| Error::shape("debias", &[matrix.shape()]))?;
        if d != self.mean.len() {
            return Err(Error::shape("debias", &[matrix.shape(), &[self.mean.len()]]));
        }
        let mut out = matrix.clone();
        for i in (0..v).filter(|i| !skip_rows.contains(i)) {
            let row = out.row_mut(i);
            row.iter_mut().zip(&self.mean).for_each(|(x, m)| *x -= m);
            for u in &self.directions {
                let proj: f64 = row.iter().zip(u).map(|(x, y)| x * y).sum();
                row.iter_mut().zip(u).for_each(|(x, y)| *x -= proj * y);
            }
        }
        Ok(out)
    }
}

/// Debiases every row of `matrix` except `skip_rows`, which are excluded
/// from the statistics and returned unchanged.
pub fn debias_all_but_top(matrix: &Tensor, k: usize, skip_rows: &[usize]) -> Result<(Tensor, DebiasReport)> {
    let (v, d) = matrix
        .dims2()
        .ok_or_else(|| Error::shape("debias", &[matrix.shape()]))?;
    let used: Vec<usize> = (0..v).filter(|i| !skip_rows.contains(i)).collect();
    let n = used.len();
    if k >= n.max(1) {
        return Err(Error::contract(format!(
            "cannot remove {k} principal components from {n} rows"
        )));
    }
    if k > d {
        return Err(Error::contract(format!(
            "cannot remove {k} principal components in dimension {d}"
        )));
    }

    let mut mean = vec![0.0; d];
    for &i in &used {
        mean.iter_mut().zip(matrix.row(i)).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let (directions, explained_variance) = if k == 0 {
        (Vec::new(), Vec::new())
    } else {
        let centered = DMatrix::from_fn(n, d, |r, c| matrix.row(used[r])[c] - mean[c]);
        let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
        top_eigenvectors(cov, k)
    };

    let report = DebiasReport {
        mean,
        directions,
        explained_variance,
        rows_used: n,
    };
    let out = report.apply(matrix, skip_rows)?;
    Ok((out, report))
}

fn top_eigenvectors(cov: DMatrix<f64>, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|j| {
            let u: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            (u, eig.eigenvalues[j])
        })
        .unzip()
}
