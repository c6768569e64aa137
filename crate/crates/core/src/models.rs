//! The two forecasting architectures.
//!
//! * [`ModelKind::Model1`]: one GRU over the input window; its final state
//!   goes through the output layer once, emitting the whole horizon.
//! * [`ModelKind::Seq2Seq`]: a GRU encoder whose final state seeds a GRU
//!   decoder. Each decoder step sees that step's known features plus the
//!   previous prediction, and the shared output layer turns every decoder
//!   state into one value.
//!
//! Only the output layer's initializer is configurable; recurrent weights
//! are always Xavier-uniform and drawn from their own random streams, so two
//! models built with the same seed differ only in the output layer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::features::{self, FeatureWindow, DEMAND_COL, LAG_COLS, N_COLUMNS, N_Y_FEATURES};
use crate::nn::layers::{BoundDense, BoundGru};
use crate::nn::{
    dense_forward, gru_step, seeded_rng, Activation, DenseParams, GruParams, Initializer, NnError,
    NodeId, ParamSet, Tape, Tensor,
};

pub const DEFAULT_HIDDEN: usize = 64;

const ENCODER_STREAM: u64 = 0;
const DECODER_STREAM: u64 = 1;
const OUTPUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown model kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Model1,
    Seq2Seq,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Model1 => "model1",
            ModelKind::Seq2Seq => "seq2seq",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model1" => Ok(ModelKind::Model1),
            "seq2seq" => Ok(ModelKind::Seq2Seq),
            other => Err(ModelError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Encoder width; the decoder shares it.
    pub hidden: usize,
    pub fc_activation: Activation,
    pub fc_initializer: Initializer,
    pub training_window: usize,
    pub predict_window: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, fc_initializer: Initializer) -> Self {
        Self {
            kind,
            input_dim: N_COLUMNS,
            hidden: DEFAULT_HIDDEN,
            fc_activation: Activation::Identity,
            fc_initializer,
            training_window: features::DEFAULT_TRAINING_WINDOW,
            predict_window: features::DEFAULT_PREDICT_WINDOW,
        }
    }

    pub fn encoder_hidden(&self) -> usize {
        self.hidden
    }

    pub fn decoder_hidden(&self) -> usize {
        self.hidden
    }

    pub fn decoder_input_dim(&self) -> usize {
        // Known features (all columns but demand) plus the fed-back prediction.
        self.input_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden == 0 {
            return Err(ModelError::InvalidConfig(
                "hidden must be at least 1".into(),
            ));
        }
        if self.input_dim < 2 {
            return Err(ModelError::InvalidConfig(
                "input_dim must be at least 2".into(),
            ));
        }
        if self.predict_window == 0 || self.training_window == 0 {
            return Err(ModelError::InvalidConfig(
                "windows must be non-empty".into(),
            ));
        }
        if self.fc_initializer == Initializer::Zero
            && self.fc_activation.derivative_at_zero() == 0.0
        {
            return Err(ModelError::InvalidConfig(format!(
                "{} has zero slope at 0; a zero-initialized output layer would never learn",
                self.fc_activation
            )));
        }
        Ok(())
    }

    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "model={}\ninput_dim={}\nhidden={}\nfc_activation={}\nfc_initializer={}\ntraining_window={}\npredict_window={}\n",
            self.kind,
            self.input_dim,
            self.hidden,
            self.fc_activation,
            self.fc_initializer,
            self.training_window,
            self.predict_window
        )
    }

    pub fn from_key_values(map: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize, ModelError> {
            get(k)?
                .parse()
                .map_err(|_| ModelError::InvalidConfig(format!("{k} is not a count")))
        };
        let cfg = Self {
            kind: get("model")?.parse()?,
            input_dim: num("input_dim")?,
            hidden: num("hidden")?,
            fc_activation: get("fc_activation")?.parse()?,
            fc_initializer: get("fc_initializer")?.parse()?,
            training_window: num("training_window")?,
            predict_window: num("predict_window")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines, ignoring blanks and `#` comments.
pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Z-scoring of demand-valued columns, fitted on training rows. Applied to
/// the demand and lag columns and to targets; predictions are mapped back
/// with [`Standardizer::inverse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer {
        mean: 0.0,
        std: 1.0,
    };

    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Model-ready tensors for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    /// `[training_window, input_dim]`.
    pub x: Tensor,
    /// `[predict_window, input_dim − 1]`.
    pub y_features: Tensor,
    /// `[1, predict_window]`, standardized transformed demand.
    pub targets: Tensor,
}

pub fn prepare_window(window: &FeatureWindow, scaler: &Standardizer) -> PreparedWindow {
    let mut x = window.x.clone();
    let cols = x.cols();
    for row in x.data_mut().chunks_exact_mut(cols) {
        row[DEMAND_COL] = scaler.apply(row[DEMAND_COL]);
        for c in LAG_COLS {
            row[c] = scaler.apply(row[c]);
        }
    }
    let mut y_features = window.y_features.clone();
    scale_y_features(&mut y_features, scaler);
    let targets: Vec<f64> = window.y_targets.iter().map(|v| scaler.apply(*v)).collect();
    PreparedWindow {
        x,
        y_features,
        targets: Tensor::from_parts_unchecked(vec![1, window.y_targets.len()], targets),
    }
}

/// Standardizes the lag columns of a `[h, N_Y_FEATURES]` block in place.
pub fn scale_y_features(y_features: &mut Tensor, scaler: &Standardizer) {
    for row in y_features.data_mut().chunks_exact_mut(N_Y_FEATURES) {
        for c in LAG_COLS {
            row[c - 1] = scaler.apply(row[c - 1]);
        }
    }
}

/// Handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[1, horizon]` standardized predictions.
    pub prediction: NodeId,
    /// Every recurrent output for the activation penalty: all encoder states
    /// as one `[steps, hidden]` node, then one node per decoder step.
    pub rnn_outputs: Vec<NodeId>,
    pub encoder_final: NodeId,
    pub decoder_initial: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub encoder: GruParams,
    pub decoder: Option<GruParams>,
    pub output: DenseParams,
    pub seed: u64,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let encoder = GruParams::create(
            &mut params,
            "encoder",
            config.input_dim,
            config.encoder_hidden(),
            &mut seeded_rng(seed, ENCODER_STREAM),
        )?;
        let (decoder, fc_out) = match config.kind {
            ModelKind::Model1 => (None, config.predict_window),
            ModelKind::Seq2Seq => (
                Some(GruParams::create(
                    &mut params,
                    "decoder",
                    config.decoder_input_dim(),
                    config.decoder_hidden(),
                    &mut seeded_rng(seed, DECODER_STREAM),
                )?),
                1,
            ),
        };
        let output = DenseParams::create(
            &mut params,
            "fc",
            config.hidden,
            fc_out,
            config.fc_activation,
            config.fc_initializer,
            &mut seeded_rng(seed, OUTPUT_STREAM),
        )?;
        params.get_mut(output.weight).averaged = true;
        params.get_mut(output.bias).averaged = true;
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            output,
            seed,
        })
    }

    /// Whether `name` belongs to the output layer.
    pub fn is_output_param(name: &str) -> bool {
        name.starts_with("fc.")
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        window: &PreparedWindow,
        tape: &mut Tape,
    ) -> Result<ForwardOutput, ModelError> {
        match self.config.kind {
            ModelKind::Model1 => self.model1_forward(params, &window.x, tape),
            ModelKind::Seq2Seq => self.seq2seq_forward(params, &window.x, &window.y_features, tape),
        }
    }

    fn encode(
        &self,
        params: &ParamSet,
        x_window: &Tensor,
        tape: &mut Tape,
    ) -> Result<(NodeId, NodeId), ModelError> {
        if x_window.cols() != self.config.input_dim {
            return Err(NnError::ShapeMismatch(format!(
                "input window has {} columns, model expects {}",
                x_window.cols(),
                self.config.input_dim
            ))
            .into());
        }
        let enc = self.encoder.bind(tape, params);
        let h0 = tape.input(Tensor::zeros(&[1, enc.hidden()]));
        let x = tape.input(x_window.clone());
        let states = crate::nn::gru_states(&enc, x, h0, tape)?;
        let rows = x_window.rows();
        let last = tape.slice_rows(states, rows - 1, rows)?;
        Ok((states, last))
    }

    /// GRU over the window, then one application of the output layer to the
    /// final state.
    pub fn model1_forward(
        &self,
        params: &ParamSet,
        x_window: &Tensor,
        tape: &mut Tape,
    ) -> Result<ForwardOutput, ModelError> {
        let (states, last) = self.encode(params, x_window, tape)?;
        let fc = self.output.bind(tape, params);
        let prediction = dense_forward(&fc, last, tape)?;
        Ok(ForwardOutput {
            prediction,
            rnn_outputs: vec![states],
            encoder_final: last,
            decoder_initial: None,
        })
    }

    pub fn seq2seq_forward(
        &self,
        params: &ParamSet,
        x_window: &Tensor,
        y_features: &Tensor,
        tape: &mut Tape,
    ) -> Result<ForwardOutput, ModelError> {
        self.seq2seq_forward_perturbed(params, x_window, y_features, None, tape)
    }

    /// Like [`Model::seq2seq_forward`], but adds `delta` to the prediction of
    /// step `t` before it is fed back to the decoder (the emitted value is
    /// left untouched).
    pub fn seq2seq_forward_perturbed(
        &self,
        params: &ParamSet,
        x_window: &Tensor,
        y_features: &Tensor,
        feedback_offset: Option<(usize, f64)>,
        tape: &mut Tape,
    ) -> Result<ForwardOutput, ModelError> {
        let decoder = self.decoder.as_ref().ok_or_else(|| {
            ModelError::InvalidConfig("seq2seq forward on a model without a decoder".into())
        })?;
        if y_features.cols() + 1 != self.config.decoder_input_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "decoder features have {} columns, expected {}",
                y_features.cols(),
                self.config.decoder_input_dim() - 1
            ))
            .into());
        }
        let (encoder_states, encoder_final) = self.encode(params, x_window, tape)?;
        let mut states = vec![encoder_states];
        let dec = decoder.bind(tape, params);
        let fc = self.output.bind(tape, params);
        let last_demand = x_window.get(x_window.rows() - 1, DEMAND_COL);
        let mut prev = tape.input(Tensor::from_parts_unchecked(vec![1, 1], vec![last_demand]));
        let mut h = encoder_final;
        let mut preds = Vec::with_capacity(y_features.rows());
        for t in 0..y_features.rows() {
            let (out, next) = decode_step(&dec, &fc, y_features, t, prev, h, tape)?;
            states.push(next);
            h = next;
            preds.push(out);
            prev = match feedback_offset {
                Some((step, delta)) if step == t => tape.add_scalar(out, delta),
                _ => out,
            };
        }
        let prediction = tape.concat(&preds)?;
        Ok(ForwardOutput {
            prediction,
            rnn_outputs: states,
            encoder_final,
            decoder_initial: Some(encoder_final),
        })
    }
}

fn decode_step(
    dec: &BoundGru,
    fc: &BoundDense,
    y_features: &Tensor,
    t: usize,
    prev: NodeId,
    h: NodeId,
    tape: &mut Tape,
) -> Result<(NodeId, NodeId), ModelError> {
    let feats = tape.input(y_features.slice_rows(t, t + 1));
    let input = tape.concat(&[feats, prev])?;
    let next = gru_step(dec, input, h, tape)?;
    let out = dense_forward(fc, next, tape)?;
    Ok((out, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::sigmoid;

    fn tiny(kind: ModelKind, init: Initializer, hidden: usize, pw: usize) -> Model {
        let cfg = ModelConfig {
            kind,
            input_dim: 3,
            hidden,
            fc_activation: Activation::Identity,
            fc_initializer: init,
            training_window: 4,
            predict_window: pw,
        };
        Model::new(cfg, 7).unwrap()
    }

    fn window(rows: usize, pw: usize) -> PreparedWindow {
        let x: Vec<f64> = (0..rows * 3).map(|i| ((i as f64) * 0.37).sin()).collect();
        let y: Vec<f64> = (0..pw * 2).map(|i| ((i as f64) * 0.71).cos()).collect();
        PreparedWindow {
            x: Tensor::matrix(rows, 3, x).unwrap(),
            y_features: Tensor::matrix(pw, 2, y).unwrap(),
            targets: Tensor::zeros(&[1, pw]),
        }
    }

    fn predict(m: &Model, w: &PreparedWindow) -> Vec<f64> {
        let mut tape = Tape::new();
        let out = m.forward(&m.params, w, &mut tape).unwrap();
        tape.value(out.prediction).data().to_vec()
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let m = tiny(ModelKind::Model1, Initializer::Zero, 5, 6);
        assert_eq!(predict(&m, &window(4, 6)), vec![0.0; 6]);
        let m = tiny(ModelKind::Seq2Seq, Initializer::Zero, 5, 6);
        assert_eq!(predict(&m, &window(4, 6)), vec![0.0; 6]);
    }

    #[test]
    fn output_length_matches_horizon() {
        for init in Initializer::ALL {
            let m = tiny(ModelKind::Model1, init, 4, 7);
            assert_eq!(predict(&m, &window(5, 7)).len(), 7);
        }
    }

    #[test]
    fn model1_scalar_oracle() {
        let cfg = ModelConfig {
            kind: ModelKind::Model1,
            input_dim: 2,
            hidden: 1,
            fc_activation: Activation::Identity,
            fc_initializer: Initializer::Zero,
            training_window: 1,
            predict_window: 1,
        };
        let mut m = Model::new(cfg, 0).unwrap();
        let values = [0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.2, 0.7, 0.05];
        for (p, v) in m.params.iter_mut().zip(values.iter().cycle()) {
            if !Model::is_output_param(&p.name) {
                p.value.data_mut().fill(*v);
            }
        }
        m.params.get_mut(m.output.weight).value.data_mut()[0] = 1.5;
        m.params.get_mut(m.output.bias).value.data_mut()[0] = -0.25;
        let pv = |name: &str| {
            m.params
                .get(m.params.find(name).unwrap())
                .value
                .data()
                .to_vec()
        };
        let x = [0.8, -1.2];
        let dot = |w: &[f64]| w[0] * x[0] + w[1] * x[1];
        let z = sigmoid(dot(&pv("encoder.w_update")) + pv("encoder.b_update")[0]);
        let cand = (dot(&pv("encoder.w_candidate")) + pv("encoder.b_candidate")[0]).tanh();
        let h = z * cand;
        let want = 1.5 * h - 0.25;
        let w = PreparedWindow {
            x: Tensor::matrix(1, 2, x.to_vec()).unwrap(),
            y_features: Tensor::zeros(&[1, 1]),
            targets: Tensor::zeros(&[1, 1]),
        };
        let got = predict(&m, &w)[0];
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn seq2seq_two_step_scalar_oracle() {
        // hidden 1, input_dim 2 (one demand column + one known feature).
        let cfg = ModelConfig {
            kind: ModelKind::Seq2Seq,
            input_dim: 2,
            hidden: 1,
            fc_activation: Activation::Tanh,
            fc_initializer: Initializer::XavierUniform,
            training_window: 1,
            predict_window: 2,
        };
        let m = Model::new(cfg, 3).unwrap();
        let p = |name: &str| {
            m.params
                .get(m.params.find(name).unwrap())
                .value
                .data()
                .to_vec()
        };
        let gru = |prefix: &str, x: &[f64], h: f64| {
            let w = |g: &str| p(&format!("{prefix}.w_{g}"));
            let u = |g: &str| p(&format!("{prefix}.u_{g}"))[0];
            let b = |g: &str| p(&format!("{prefix}.b_{g}"))[0];
            let xw = |g: &str| w(g).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let z = sigmoid(xw("update") + h * u("update") + b("update"));
            let r = sigmoid(xw("reset") + h * u("reset") + b("reset"));
            let c = (xw("candidate") + r * h * u("candidate") + b("candidate")).tanh();
            (1.0 - z) * h + z * c
        };
        let fc = |h: f64| (h * p("fc.weight")[0] + p("fc.bias")[0]).tanh();
        // Column 0 is demand.
        let x = [0.4, -0.3];
        let yf = [0.9, -0.5];
        let h_enc = gru("encoder", &x, 0.0);
        let h1 = gru("decoder", &[yf[0], x[0]], h_enc);
        let o1 = fc(h1);
        let h2 = gru("decoder", &[yf[1], o1], h1);
        let o2 = fc(h2);
        let w = PreparedWindow {
            x: Tensor::matrix(1, 2, x.to_vec()).unwrap(),
            y_features: Tensor::matrix(2, 1, yf.to_vec()).unwrap(),
            targets: Tensor::zeros(&[1, 2]),
        };
        let got = predict(&m, &w);
        assert!(
            (got[0] - o1).abs() < 1e-12 && (got[1] - o2).abs() < 1e-12,
            "{got:?} vs {o1} {o2}"
        );
    }

    #[test]
    fn degenerate_horizon_is_one_decoder_step() {
        let m = tiny(ModelKind::Seq2Seq, Initializer::XavierNormal, 3, 1);
        let w = window(4, 1);
        let mut tape = Tape::new();
        let out = m.forward(&m.params, &w, &mut tape).unwrap();
        assert_eq!(tape.value(out.prediction).len(), 1);
        // Encoder states as one node, then one node per decoder step.
        assert_eq!(out.rnn_outputs.len(), 2);
        assert_eq!(out.decoder_initial, Some(out.encoder_final));
    }

    #[test]
    fn decoder_is_causal() {
        let m = tiny(ModelKind::Seq2Seq, Initializer::XavierUniform, 4, 6);
        let w = window(5, 6);
        let base = predict(&m, &w);
        for t in 0..6 {
            let mut tape = Tape::new();
            let out = m
                .seq2seq_forward_perturbed(
                    &m.params,
                    &w.x,
                    &w.y_features,
                    Some((t, 0.5)),
                    &mut tape,
                )
                .unwrap();
            let got = tape.value(out.prediction).data().to_vec();
            for s in 0..6 {
                if s <= t {
                    assert_eq!(got[s], base[s], "step {s} changed after perturbing {t}");
                } else {
                    assert_ne!(got[s], base[s], "step {s} ignored perturbation at {t}");
                }
            }
        }
    }

    #[test]
    fn initializer_arms_share_recurrent_weights() {
        let a = tiny(ModelKind::Seq2Seq, Initializer::Zero, 4, 3);
        for init in Initializer::ALL {
            let b = tiny(ModelKind::Seq2Seq, init, 4, 3);
            for (pa, pb) in a.params.iter().zip(b.params.iter()) {
                assert_eq!(pa.name, pb.name);
                if !Model::is_output_param(&pa.name) {
                    assert_eq!(pa.value, pb.value, "{}", pa.name);
                }
            }
        }
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = ModelConfig::new(ModelKind::Seq2Seq, Initializer::HeNormal);
        let back = ModelConfig::from_key_values(&parse_key_values(&cfg.to_key_values())).unwrap();
        assert_eq!(cfg, back);
        let mut bad = cfg.clone();
        bad.hidden = 0;
        assert!(bad.validate().is_err());
        assert!("lstm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn shape_mismatch_reported() {
        let m = tiny(ModelKind::Model1, Initializer::Zero, 3, 2);
        let w = PreparedWindow {
            x: Tensor::zeros(&[4, 5]),
            y_features: Tensor::zeros(&[2, 2]),
            targets: Tensor::zeros(&[1, 2]),
        };
        let mut tape = Tape::new();
        assert!(matches!(
            m.forward(&m.params, &w, &mut tape),
            Err(ModelError::Nn(NnError::ShapeMismatch(_)))
        ));
    }

    #[test]
    fn standardizer_inverts() {
        let s = Standardizer::fit(&[8.0, 9.0, 10.0]);
        assert!((s.inverse(s.apply(8.7)) - 8.7).abs() < 1e-12);
        assert_eq!(Standardizer::fit(&[2.0, 2.0]).std, 1.0);
    }
}
