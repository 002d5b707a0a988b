use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The distance `d` used for output search and both ranking losses.
///
/// `Cosine` is the default. `Dot` is the negated inner product, so that
/// smaller still means closer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Cosine,
    Euclidean,
    Dot,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl DistanceKind {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::shape("distance", &[&[a.len()], &[b.len()]]));
        }
        Ok(match self {
            DistanceKind::Cosine => {
                let (na, nb) = (norm(a), norm(b));
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::contract("cosine distance of a zero-norm vector"));
                }
                1.0 - dot(a, b) / (na * nb)
            }
            DistanceKind::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceKind::Dot => -dot(a, b),
        })
    }

    /// Adds `upstream * ∂d/∂a` to `grad_a` and `upstream * ∂d/∂b` to `grad_b`.
    pub(crate) fn accumulate_grad(
        self,
        a: &[f64],
        b: &[f64],
        upstream: f64,
        grad_a: &mut [f64],
        grad_b: &mut [f64],
    ) {
        match self {
            DistanceKind::Cosine => {
                let (na, nb) = (norm(a), norm(b));
                let s = dot(a, b);
                let inv = 1.0 / (na * nb);
                let ca = s / (na * na);
                let cb = s / (nb * nb);
                for i in 0..a.len() {
                    grad_a[i] -= upstream * inv * (b[i] - ca * a[i]);
                    grad_b[i] -= upstream * inv * (a[i] - cb * b[i]);
                }
            }
            DistanceKind::Euclidean => {
                let d = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                if d == 0.0 {
                    return;
                }
                for i in 0..a.len() {
                    let g = upstream * (a[i] - b[i]) / d;
                    grad_a[i] += g;
                    grad_b[i] -= g;
                }
            }
            DistanceKind::Dot => {
                for i in 0..a.len() {
                    grad_a[i] -= upstream * b[i];
                    grad_b[i] -= upstream * a[i];
                }
            }
        }
    }
}

/// Cosine distance `1 − a·b / (‖a‖‖b‖)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    DistanceKind::Cosine.distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_fixed_points() {
        assert!(cosine_distance(&[0.3, -2.0, 1.0], &[0.3, -2.0, 1.0]).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(DistanceKind::Euclidean.distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn other_kinds() {
        assert_eq!(DistanceKind::Euclidean.distance(&[0.0, 3.0], &[4.0, 0.0]).unwrap(), 5.0);
        assert_eq!(DistanceKind::Dot.distance(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), -11.0);
    }
}
