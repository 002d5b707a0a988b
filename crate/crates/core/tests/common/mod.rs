//! Independent reference implementations used as test oracles. Nothing
//! in this file calls into the library; `toy` holds the model fixtures.
#![allow(dead_code)]

pub mod toy;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    1.0 - ab / (aa.sqrt() * bb.sqrt())
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues and
/// eigenvectors (as rows), sorted by decreasing eigenvalue.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Center rows, then remove projections on the top `k` covariance
/// eigenvectors.
pub fn debias_oracle(rows: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n - 1) as f64).collect())
        .collect();
    let (_, vectors) = jacobi_eigen(&cov);
    centered
        .into_iter()
        .map(|mut r| {
            for u in &vectors[..k] {
                let p: f64 = r.iter().zip(u).map(|(x, y)| x * y).sum();
                for (x, y) in r.iter_mut().zip(u) {
                    *x -= p * y;
                }
            }
            r
        })
        .collect()
}

/// Linear scan with strict `<`, so the first (lowest) id wins ties.
pub fn scan_nearest(query: &[f64], table: &[Vec<f64>], eligible: impl Fn(usize) -> bool) -> usize {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (i, row) in table.iter().enumerate() {
        if !eligible(i) {
            continue;
        }
        let d = cosine(query, row);
        if best.is_none() || d < best_d {
            best = Some(i);
            best_d = d;
        }
    }
    best.unwrap()
}

pub fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Sentence-presence precision/recall/F per word type.
pub fn fscore_oracle(hyps: &[Vec<String>], refs: &[Vec<String>]) -> BTreeMap<String, (f64, f64, f64)> {
    let mut words: Vec<&String> = hyps.iter().chain(refs).flatten().collect();
    words.sort();
    words.dedup();
    let mut out = BTreeMap::new();
    for w in words {
        let (mut h, mut r, mut both) = (0.0, 0.0, 0.0);
        for i in 0..hyps.len() {
            let in_h = hyps[i].contains(w);
            let in_r = refs[i].contains(w);
            if in_h {
                h += 1.0;
            }
            if in_r {
                r += 1.0;
            }
            if in_h && in_r {
                both += 1.0;
            }
        }
        let p = if h > 0.0 { both / h } else { 0.0 };
        let rc = if r > 0.0 { both / r } else { 0.0 };
        let f = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
        out.insert(w.clone(), (p, rc, f));
    }
    out
}

/// Random corpus over a small alphabet, at most `max_sentences` lines.
pub fn random_corpus(rng: &mut ChaCha8Rng, sentences: usize, words: usize) -> Vec<Vec<String>> {
    (0..sentences)
        .map(|_| {
            let len = rng.random_range(0..8);
            (0..len).map(|_| format!("w{}", rng.random_range(0..words))).collect()
        })
        .collect()
}
