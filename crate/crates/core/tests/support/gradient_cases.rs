//! Small random gradient-check instances, shared by the core test suite and
//! the acceptance runner.
#![allow(dead_code)]

use loadcast_core::models::{Model, ModelConfig, ModelError, ModelKind, PreparedWindow};
use loadcast_core::nn::gradcheck::check_gradients;
use loadcast_core::nn::{
    dense_forward, gru_states, gru_step, l2_activation_penalty, loss_mae, loss_quadratic,
    loss_ssmape, seeded_rng, Activation, DenseParams, GruParams, Initializer, NnError, NodeId,
    ParamSet, Tape, Tensor,
};
use rand::Rng;

pub const TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub enum Loss {
    Mae,
    Ssmape,
    Quadratic,
}

pub const LOSSES: [Loss; 3] = [Loss::Mae, Loss::Ssmape, Loss::Quadratic];

fn apply_loss(
    tape: &mut Tape,
    loss: Loss,
    pred: NodeId,
    target: &Tensor,
) -> Result<NodeId, NnError> {
    let t = tape.input(target.clone());
    match loss {
        Loss::Mae => loss_mae(tape, pred, t),
        Loss::Ssmape => loss_ssmape(tape, pred, t, 0.1),
        Loss::Quadratic => loss_quadratic(tape, pred, t),
    }
}

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

/// Random non-zero values everywhere so no path is trivially dead.
fn jitter(params: &mut ParamSet, seed: u64) {
    let mut rng = seeded_rng(seed, 99);
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

pub fn dense_case(seed: u64, loss: Loss, act: Activation) -> f64 {
    let mut rng = seeded_rng(seed, 0);
    let (fan_in, fan_out) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let mut params = ParamSet::new();
    let layer = DenseParams::create(
        &mut params,
        "fc",
        fan_in,
        fan_out,
        act,
        Initializer::XavierNormal,
        &mut rng,
    )
    .unwrap();
    jitter(&mut params, seed);
    let x = random(&mut rng, 2, fan_in);
    let y = random(&mut rng, 2, fan_out);
    check_gradients(&mut params, |p, tape| {
        let bound = layer.bind(tape, p);
        let xi = tape.input(x.clone());
        let out = dense_forward(&bound, xi, tape)?;
        apply_loss(tape, loss, out, &y)
    })
    .unwrap()
    .max_rel_error
}

pub fn gru_step_case(seed: u64, loss: Loss) -> f64 {
    let mut rng = seeded_rng(seed, 0);
    let (input, hidden) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let mut params = ParamSet::new();
    let gru = GruParams::create(&mut params, "gru", input, hidden, &mut rng).unwrap();
    jitter(&mut params, seed);
    let x = random(&mut rng, 1, input);
    let h = random(&mut rng, 1, hidden);
    let y = random(&mut rng, 1, hidden);
    check_gradients(&mut params, |p, tape| {
        let bound = gru.bind(tape, p);
        let xi = tape.input(x.clone());
        let hi = tape.input(h.clone());
        let out = gru_step(&bound, xi, hi, tape)?;
        apply_loss(tape, loss, out, &y)
    })
    .unwrap()
    .max_rel_error
}

pub fn gru_sequence_case(seed: u64, loss: Loss) -> f64 {
    let mut rng = seeded_rng(seed, 0);
    let (input, hidden, steps) = (
        rng.random_range(1..=4),
        rng.random_range(1..=6),
        rng.random_range(1..=6),
    );
    let mut params = ParamSet::new();
    let gru = GruParams::create(&mut params, "gru", input, hidden, &mut rng).unwrap();
    jitter(&mut params, seed);
    let x = random(&mut rng, steps, input);
    let y = random(&mut rng, steps, hidden);
    check_gradients(&mut params, |p, tape| {
        let bound = gru.bind(tape, p);
        let xi = tape.input(x.clone());
        let h0 = tape.input(Tensor::zeros(&[1, hidden]));
        let states = gru_states(&bound, xi, h0, tape)?;
        let fit = apply_loss(tape, loss, states, &y)?;
        let pen = l2_activation_penalty(tape, &[states], 0.05)?;
        tape.add(fit, pen)
    })
    .unwrap()
    .max_rel_error
}

pub fn model_case(seed: u64, loss: Loss, kind: ModelKind) -> f64 {
    let mut rng = seeded_rng(seed, 0);
    let hidden = rng.random_range(1..=5);
    let (tw, pw) = (
        rng.random_range(1..=5),
        if kind == ModelKind::Seq2Seq {
            2
        } else {
            rng.random_range(1..=4)
        },
    );
    let cfg = ModelConfig {
        kind,
        input_dim: 3,
        hidden,
        fc_activation: Activation::Tanh,
        fc_initializer: Initializer::HeUniform,
        training_window: tw,
        predict_window: pw,
    };
    let mut model = Model::new(cfg, seed).unwrap();
    jitter(&mut model.params, seed);
    let window = PreparedWindow {
        x: random(&mut rng, tw, 3),
        y_features: random(&mut rng, pw, 2),
        targets: random(&mut rng, 1, pw),
    };
    let m = model.clone();
    check_gradients(&mut model.params, |p, tape| {
        let out = m.forward(p, &window, tape).map_err(|e| match e {
            ModelError::Nn(n) => n,
            other => NnError::ShapeMismatch(other.to_string()),
        })?;
        let fit = apply_loss(tape, loss, out.prediction, &window.targets)?;
        let pen = l2_activation_penalty(tape, &out.rnn_outputs, 0.01)?;
        tape.add(fit, pen)
    })
    .unwrap()
    .max_rel_error
}

/// Every component under every loss, two random instances each.
pub fn suite() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (i, loss) in LOSSES.into_iter().enumerate() {
        for k in 0..2u64 {
            let seed = 100 * i as u64 + k;
            out.push((
                format!("dense/identity/{loss:?}/{k}"),
                dense_case(seed, loss, Activation::Identity),
            ));
            out.push((
                format!("dense/sigmoid/{loss:?}/{k}"),
                dense_case(seed + 50, loss, Activation::Sigmoid),
            ));
            out.push((format!("gru_step/{loss:?}/{k}"), gru_step_case(seed, loss)));
            out.push((
                format!("gru_sequence/{loss:?}/{k}"),
                gru_sequence_case(seed, loss),
            ));
            out.push((
                format!("model1/{loss:?}/{k}"),
                model_case(seed, loss, ModelKind::Model1),
            ));
            out.push((
                format!("seq2seq/{loss:?}/{k}"),
                model_case(seed, loss, ModelKind::Seq2Seq),
            ));
        }
    }
    out
}
