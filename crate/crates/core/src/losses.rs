//! Ranking losses for the translation and visual tasks, their
//! interpolation, and cross-entropy for the softmax baseline.
//!
//! Both ranking losses are written with `d` as a distance: the gold item
//! must be closer than the negative by the margin,
//! `max{0, margin + d(pred, gold) − d(pred, negative)}`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::embeddings::{DistanceKind, NeighborIndex, BOS, PAD};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.01;
/// Floor applied to probabilities before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// How the translation negative `w⁻` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Non-gold word nearest the prediction.
    #[default]
    MostOffending,
    /// Non-gold word maximizing `d(e(w), e(y)) − d(ê, e(w))`: near the
    /// prediction and far from the gold word.
    ProseFaithful,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Translation margin γ.
    pub gamma: f64,
    /// Visual margin α.
    pub alpha: f64,
    /// Weight λ of the translation loss.
    pub lambda: f64,
    pub negative: NegativeMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: DEFAULT_GAMMA,
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            negative: NegativeMode::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.alpha >= 0.0) {
            return Err(Error::config("loss margins must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

fn eligible(w: usize, gold: usize) -> bool {
    w != PAD && w != BOS && w != gold
}

/// Picks the negative word for one prediction; ties go to the lowest id.
pub fn select_negative(prediction: &[f64], gold: usize, index: &NeighborIndex, mode: NegativeMode) -> Result<usize> {
    match mode {
        NegativeMode::MostOffending => Ok(index.argmin_by(prediction, |w| eligible(w, gold))?.0),
        NegativeMode::ProseFaithful => {
            let table = index.table();
            let gold_row = table.row(gold);
            let mut best: Option<(usize, f64)> = None;
            for w in (0..table.shape()[0]).filter(|&w| eligible(w, gold)) {
                let score = index.kind().distance(table.row(w), gold_row)? - index.distance(prediction, w)?;
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((w, score));
                }
            }
            best.map(|b| b.0)
                .ok_or_else(|| Error::contract("select_negative: no eligible rows"))
        }
    }
}

/// Negatives for every row of a `[K,E]` prediction matrix.
pub fn select_negatives(
    predictions: &Tensor,
    gold: &[usize],
    table: &Tensor,
    kind: DistanceKind,
    mode: NegativeMode,
) -> Result<Vec<usize>> {
    let index = NeighborIndex::new(table, kind)?;
    predictions
        .rows()
        .zip(gold)
        .map(|(p, &y)| select_negative(p, y, &index, mode))
        .collect()
}

/// Per-step hinge terms `[K,1]` for predictions `[K,E]` against rows of
/// `table` with fixed negative ids. No gradient flows into the selection.
pub fn margin_ranking_terms(
    tape: &mut Tape,
    predictions: Var,
    table: Var,
    gold: &[usize],
    negatives: &[usize],
    gamma: f64,
    kind: DistanceKind,
) -> Result<Var> {
    if gold.len() != negatives.len() {
        return Err(Error::contract("gold and negative id counts differ"));
    }
    let gold_rows = tape.embedding_lookup(table, gold)?;
    let neg_rows = tape.embedding_lookup(table, negatives)?;
    let d_gold = tape.row_distance(predictions, gold_rows, kind)?;
    let d_neg = tape.row_distance(predictions, neg_rows, kind)?;
    let diff = tape.sub(d_gold, d_neg)?;
    let shifted = tape.add_scalar(diff, gamma);
    Ok(tape.relu(shifted))
}

/// `J_T`: hinge terms summed over the unmasked steps in `predictions`,
/// divided by `batch_size`. Returns the loss and the chosen negatives.
#[allow(clippy::too_many_arguments)]
pub fn margin_ranking_loss(
    tape: &mut Tape,
    predictions: Var,
    table: Var,
    gold: &[usize],
    gamma: f64,
    kind: DistanceKind,
    mode: NegativeMode,
    batch_size: usize,
) -> Result<(Var, Vec<usize>)> {
    let negatives = select_negatives(tape.value(predictions), gold, tape.value(table), kind, mode)?;
    let terms = margin_ranking_terms(tape, predictions, table, gold, &negatives, gamma, kind)?;
    let total = tape.sum(terms);
    Ok((tape.scale(total, 1.0 / batch_size.max(1) as f64), negatives))
}

/// `J_V = Σ_b Σ_{b'≠b} max{0, α + d(v̂_b, v_b) − d(v̂_b, v_b')}` with
/// contrastive images taken from the same batch.
pub fn visual_max_margin(tape: &mut Tape, projected: Var, images: Var, alpha: f64, kind: DistanceKind) -> Result<Var> {
    let pair = tape.pairwise_distance(projected, images, kind)?;
    let positive = tape.row_distance(projected, images, kind)?;
    let b = tape.value(pair).shape()[0];
    let neg = tape.scale(pair, -1.0);
    let diff = tape.shift_rows(neg, positive)?;
    let shifted = tape.add_scalar(diff, alpha);
    let hinge = tape.relu(shifted);
    let off_diagonal = Tensor::new(
        vec![b, b],
        (0..b * b).map(|i| if i / b == i % b { 0.0 } else { 1.0 }).collect(),
    )?;
    let mask = tape.constant(off_diagonal);
    let terms = tape.mul(hinge, mask)?;
    Ok(tape.sum(terms))
}

/// `λ·J_T + (1−λ)·J_V`, or `J_T` alone when there is no visual term.
pub fn multitask_loss(tape: &mut Tape, translation: Var, visual: Option<Var>, lambda: f64) -> Result<Var> {
    let Some(visual) = visual else {
        return Ok(translation);
    };
    let t = tape.scale(translation, lambda);
    let v = tape.scale(visual, 1.0 - lambda);
    tape.add(t, v)
}

/// Masked mean negative log-likelihood of `gold` under row distributions
/// `probabilities` (`[K,V]`). Rows with `mask[i] == false` are ignored.
pub fn cross_entropy_loss(tape: &mut Tape, probabilities: Var, gold: &[usize], mask: &[bool]) -> Result<Var> {
    if gold.len() != mask.len() {
        return Err(Error::contract("gold ids and mask differ in length"));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::contract("cross entropy over an all-masked batch"));
    }
    let kept = tape.embedding_lookup(probabilities, &rows)?;
    let ids: Vec<usize> = rows.iter().map(|&i| gold[i]).collect();
    let picked = tape.gather_cols(kept, &ids)?;
    let logp = tape.log_clamped(picked, PROBABILITY_FLOOR);
    let total = tape.sum(logp);
    Ok(tape.scale(total, -1.0 / rows.len() as f64))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, FD_STEP};

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::uniform(shape, -1.0, 1.0, rng)
    }

    #[test]
    fn defaults() {
        let c = LossConfig::default();
        assert_eq!((c.gamma, c.alpha, c.lambda), (0.5, 0.1, 0.01));
        assert!(LossConfig { lambda: 1.5, ..c.clone() }.validate().is_err());
        assert!(LossConfig { gamma: -1.0, ..c }.validate().is_err());
    }

    #[test]
    fn most_offending_finds_exact_row() {
        let table = t(&[6, 2], &[0., 0., 1., 1., 9., 9., 1., 0., 0., 1., -1., 0.]);
        let index = NeighborIndex::new(&table, DistanceKind::Cosine).unwrap();
        assert_eq!(select_negative(&[0.0, 2.0], 3, &index, NegativeMode::MostOffending).unwrap(), 4);
        // the gold row itself is never returned
        assert_eq!(select_negative(&[0.0, 2.0], 4, &index, NegativeMode::MostOffending).unwrap(), 1);
    }

    #[test]
    fn hinge_arithmetic() {
        // d(ê, gold) = 0.3 and d(ê, neg) = 0.4 under Euclidean distance
        let mut tape = Tape::new();
        let pred = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let table = tape.constant(t(&[6, 2], &[0., 0., 0., 0., 0., 0., 0., 0., 0.3, 0., 0., 0.4]));
        let terms = margin_ranking_terms(&mut tape, pred, table, &[4], &[5], 0.5, DistanceKind::Euclidean).unwrap();
        assert!((tape.value(terms).item() - 0.4).abs() < 1e-15);
        let terms = margin_ranking_terms(&mut tape, pred, table, &[0], &[5], 0.3, DistanceKind::Euclidean).unwrap();
        assert_eq!(tape.value(terms).item(), 0.0);
    }

    #[test]
    fn visual_single_row_is_zero() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let v = tape.constant(t(&[1, 3], &[-1.0, 0.5, 3.0]));
        let j = visual_max_margin(&mut tape, p, v, 0.1, DistanceKind::Cosine).unwrap();
        assert_eq!(tape.value(j).item(), 0.0);
    }

    #[test]
    fn visual_identical_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let p = tape.constant(random(&[4, 5], &mut rng));
        let img = random(&[1, 5], &mut rng);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| img.data().to_vec()).collect();
        let v = tape.constant(Tensor::from_rows(&rows).unwrap());
        let j = visual_max_margin(&mut tape, p, v, 0.1, DistanceKind::Cosine).unwrap();
        assert!((tape.value(j).item() - 4.0 * 3.0 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn interpolation() {
        let mut tape = Tape::new();
        let jt = tape.constant(Tensor::scalar(2.0));
        let jv = tape.constant(Tensor::scalar(3.0));
        let j = multitask_loss(&mut tape, jt, Some(jv), 0.01).unwrap();
        assert!((tape.value(j).item() - 2.99).abs() < 1e-12);
        let j = multitask_loss(&mut tape, jt, Some(jv), 1.0).unwrap();
        assert_eq!(tape.value(j).item(), 2.0);
        let j = multitask_loss(&mut tape, jt, Some(jv), 0.0).unwrap();
        assert_eq!(tape.value(j).item(), 3.0);
        let j = multitask_loss(&mut tape, jt, None, 0.3).unwrap();
        assert_eq!(tape.value(j).item(), 2.0);
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let one_hot = tape.constant(t(&[2, 3], &[0., 1., 0., 1., 0., 0.]));
        let l = cross_entropy_loss(&mut tape, one_hot, &[1, 0], &[true, true]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let uniform = tape.constant(Tensor::full(&[3, 5], 0.2));
        let l = cross_entropy_loss(&mut tape, uniform, &[0, 4, 2], &[true, false, true]).unwrap();
        assert!((tape.value(l).item() - 5f64.ln()).abs() < 1e-12);
        let l = cross_entropy_loss(&mut tape, one_hot, &[2, 0], &[true, true]).unwrap();
        assert!((tape.value(l).item() - 0.5 * -(PROBABILITY_FLOOR.ln())).abs() < 1e-9);
        assert_eq!(tape.clamp_count(), 1);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pred = random(&[5, 4], &mut rng);
        let table = random(&[8, 4], &mut rng);
        let gold: Vec<usize> = (0..5).map(|_| rng.random_range(4..8)).collect();
        let neg: Vec<usize> = gold.iter().map(|g| if *g == 7 { 4 } else { g + 1 }).collect();
        let r = check_gradients(
            &[pred, table],
            |tape, v| {
                let terms = margin_ranking_terms(tape, v[0], v[1], &gold, &neg, 2.0, DistanceKind::Cosine)?;
                Ok(tape.sum(terms))
            },
            FD_STEP,
        )
        .unwrap();
        assert!(r.max_relative_error <= 1e-5, "{r:?}");

        let r = check_gradients(
            &[random(&[4, 6], &mut rng), random(&[4, 6], &mut rng)],
            |tape, v| visual_max_margin(tape, v[0], v[1], 2.5, DistanceKind::Cosine),
            FD_STEP,
        )
        .unwrap();
        assert!(r.max_relative_error <= 1e-5, "{r:?}");

        let r = check_gradients(
            &[random(&[3, 5], &mut rng)],
            |tape, v| {
                let p = tape.softmax(v[0], 1)?;
                cross_entropy_loss(tape, p, &[0, 3, 4], &[true, false, true])
            },
            FD_STEP,
        )
        .unwrap();
        assert!(r.max_relative_error <= 1e-5, "{r:?}");
    }
}
