mod common;

use common::toy::{fixed_negatives, gradcheck_config, gradcheck_model, model_gradcheck, objective, toy_batch, toy_model, Part};
use mmt_core::autodiff::gradcheck::{check_gradients, check_param_gradients, FD_STEP};
use mmt_core::autodiff::{Tape, Tensor, Var};
use mmt_core::embeddings::DistanceKind;
use mmt_core::losses::{cross_entropy_loss, LossConfig, NegativeMode};
use mmt_core::model::{Feedback, Mode, ModelConfig, OutputHead};
use mmt_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-5;

/// Scalar `Σ c ⊙ v` with weights drawn from a fixed stream, so every
/// output entry contributes a distinct gradient.
fn weighted(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = shape.iter().product();
    let c = tape.constant(Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
    let m = tape.mul(v, c)?;
    Ok(tape.sum(m))
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

type Check = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn cases(rng: &mut ChaCha8Rng, m: usize, k: usize, n: usize) -> Vec<(&'static str, Vec<Tensor>, Check)> {
    let mut mask: Vec<bool> = (0..m * n).map(|_| rng.random_bool(0.6)).collect();
    for r in 0..m {
        mask[r * n] = true;
    }
    let ids: Vec<usize> = (0..m + 1).map(|_| rng.random_range(0..k)).collect();
    let cols: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    let keep: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
    // relu inputs kept away from the kink
    let relu_in = Tensor::new(
        vec![m, n],
        (0..m * n).map(|_| rng.random_range(0.05..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect(),
    )
    .unwrap();
    vec![
        ("matmul_tanh", vec![rand_t(rng, &[m, k], -1., 1.), rand_t(rng, &[k, n], -1., 1.)], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.tanh(y);
            weighted(t, y)
        })),
        ("bias_sigmoid", vec![rand_t(rng, &[m, n], -2., 2.), rand_t(rng, &[n], -1., 1.)], Box::new(|t, v| {
            let y = t.add_bias(v[0], v[1])?;
            let y = t.sigmoid(y);
            weighted(t, y)
        })),
        ("softmax_both_axes", vec![rand_t(rng, &[m, n], -2., 2.)], Box::new(|t, v| {
            let a = t.softmax(v[0], 1)?;
            let b = t.softmax(v[0], 0)?;
            let y = t.add(a, b)?;
            weighted(t, y)
        })),
        ("masked_softmax", vec![rand_t(rng, &[m, n], -2., 2.)], Box::new(move |t, v| {
            let y = t.masked_softmax(v[0], &mask)?;
            weighted(t, y)
        })),
        ("relu", vec![relu_in], Box::new(|t, v| {
            let y = t.relu(v[0]);
            weighted(t, y)
        })),
        ("log_mul_sub", vec![rand_t(rng, &[m, n], 0.2, 2.), rand_t(rng, &[m, n], -1., 1.)], Box::new(|t, v| {
            let l = t.log_clamped(v[0], 1e-12);
            let p = t.mul(l, v[1])?;
            let y = t.sub(p, v[1])?;
            weighted(t, y)
        })),
        ("concat_narrow", vec![rand_t(rng, &[m, k], -1., 1.), rand_t(rng, &[m, n], -1., 1.)], Box::new(move |t, v| {
            let c = t.concat(&[v[0], v[1]], 1)?;
            let d = t.concat(&[c, c], 0)?;
            let y = t.narrow(d, 1, k.min(1), n)?;
            weighted(t, y)
        })),
        ("mean_sum_axis", vec![rand_t(rng, &[m, n], -1., 1.)], Box::new(|t, v| {
            let a = t.mean(v[0], 0)?;
            let b = t.sum_axis(v[0], 1)?;
            let a = weighted(t, a)?;
            let b = weighted(t, b)?;
            let s = t.scale(b, 0.5);
            t.add(a, s)
        })),
        ("scale_shift_rows", vec![rand_t(rng, &[m, n], -1., 1.), rand_t(rng, &[m, 1], -1., 1.)], Box::new(|t, v| {
            let a = t.scale_rows(v[0], v[1])?;
            let b = t.shift_rows(a, v[1])?;
            let y = t.add_scalar(b, 0.3);
            weighted(t, y)
        })),
        ("cosine_distances", vec![rand_t(rng, &[m, k], -1., 1.), rand_t(rng, &[m, k], -1., 1.)], Box::new(|t, v| {
            let a = t.row_distance(v[0], v[1], DistanceKind::Cosine)?;
            let b = t.pairwise_distance(v[0], v[1], DistanceKind::Cosine)?;
            let a = weighted(t, a)?;
            let b = weighted(t, b)?;
            t.add(a, b)
        })),
        ("lookup_gather", vec![rand_t(rng, &[k, n], -1., 1.)], Box::new(move |t, v| {
            let rows = t.embedding_lookup(v[0], &ids)?;
            let rows = t.narrow(rows, 0, 0, cols.len())?;
            let y = t.gather_cols(rows, &cols)?;
            weighted(t, y)
        })),
        ("select_rows", vec![rand_t(rng, &[m, n], -1., 1.), rand_t(rng, &[m, n], -1., 1.)], Box::new(move |t, v| {
            let y = t.select_rows(&keep, v[0], v[1])?;
            weighted(t, y)
        })),
        ("dropout", vec![rand_t(rng, &[m, n], -1., 1.)], Box::new(|t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            let y = t.dropout(v[0], 0.4, true, &mut r)?;
            weighted(t, y)
        })),
    ]
}

#[test]
fn primitives_on_100_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for shape in 0..100 {
        let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        for (name, inputs, f) in cases(&mut rng, m, k, n) {
            let r = check_gradients(&inputs, f, FD_STEP).unwrap();
            assert!(r.max_relative_error <= TOL, "shape #{shape} ({m},{k},{n}) {name}: {r:?}");
        }
    }
}

fn assert_model(config: ModelConfig, loss: &LossConfig) {
    let model = gradcheck_model(config, 3);
    let batch = toy_batch(&model, 2, 4);
    for part in [Part::Translation, Part::Visual, Part::Joint] {
        let (value, reports) = model_gradcheck(&model, &batch, loss, part);
        assert!(value > 0.0, "{part:?}: inactive objective");
        assert_eq!(reports.len(), model.store().len());
        for (name, err) in reports {
            assert!(err <= TOL, "{part:?} {name}: {err}");
        }
    }
}

#[test]
fn full_model_embedding_head() {
    assert_model(gradcheck_config(), &LossConfig::default());
}

#[test]
fn full_model_predicted_feedback_prose_negatives() {
    let loss = LossConfig {
        negative: NegativeMode::ProseFaithful,
        ..Default::default()
    };
    assert_model(
        ModelConfig {
            feedback: Feedback::Predicted,
            ..gradcheck_config()
        },
        &loss,
    );
}

#[test]
fn full_model_softmax_cross_entropy() {
    let config = ModelConfig {
        output_head: OutputHead::Softmax,
        multimodal: false,
        ..gradcheck_config()
    };
    let model = gradcheck_model(config, 3);
    let batch = toy_batch(&model, 2, 4);
    let frozen = model.clone();
    let mut store = model.store().clone();
    let reports = check_param_gradients(
        &mut store,
        |_, tape, p| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut mode = Mode::eval(&mut rng);
            let enc = frozen.encode(tape, p, &batch, &mut mode)?;
            let tf = frozen.teacher_forced(tape, p, &batch, &enc, &mut mode)?;
            let stacked = tape.concat(&tf.outputs, 0)?;
            cross_entropy_loss(tape, stacked, &tf.gold.concat(), &tf.mask.concat())
        },
        FD_STEP,
    )
    .unwrap();
    assert_eq!(reports.len(), model.store().len());
    for (name, r) in reports {
        assert!(r.max_relative_error <= TOL, "{name}: {r:?}");
    }
}

#[test]
fn fd_error_at_default_init_is_truncation() {
    // tiny predictions: the finite-difference error falls with h², so the
    // analytic gradient is what the differences converge to
    let model = toy_model(gradcheck_config(), 3);
    let batch = toy_batch(&model, 2, 4);
    let loss = LossConfig::default();
    let negatives = fixed_negatives(&model, &batch, &loss);
    let errors: Vec<f64> = [1e-4, 1e-5]
        .iter()
        .map(|&h| {
            let mut store = model.store().clone();
            check_param_gradients(
                &mut store,
                |_, tape, p| Ok(objective(&model, tape, p, &batch, &negatives, &loss, Part::Translation)),
                h,
            )
            .unwrap()
            .iter()
            .map(|(_, r)| r.max_relative_error)
            .fold(0.0, f64::max)
        })
        .collect();
    assert!(errors[1] < errors[0] / 50.0, "{errors:?}");
}
