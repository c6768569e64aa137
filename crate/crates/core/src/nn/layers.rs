//! Dense and GRU layers.
//!
//! Layers own [`ParamId`]s into a shared [`ParamSet`]. Before a forward pass
//! a layer is bound to a tape once, which records each parameter a single
//! time no matter how many recurrent steps reuse it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::init::{init_xavier_uniform, Initializer};
use super::{NnError, NodeId, ParamId, ParamSet, Parameter, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => super::math::tanh(x),
            Activation::Sigmoid => super::tape::sigmoid(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - super::math::tanh(x).powi(2),
            Activation::Sigmoid => {
                let s = super::tape::sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// A zero-initialized output layer keeps learning only if this is
    /// nonzero.
    pub fn derivative_at_zero(self) -> f64 {
        self.derivative(0.0)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn record(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => tape.identity(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(NnError::UnknownActivation(other.to_string())),
        }
    }
}

/// Fully connected layer `σ(x·W + b)` with `W: [in, out]`, `b: [out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl DenseParams {
    /// Creates the layer's parameters. The bias always starts at zero.
    pub fn create(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        init: Initializer,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let w = init.weight(&[fan_in, fan_out], rng)?;
        let weight = params.add(Parameter::new(format!("{name}.weight"), init.tag(), w));
        let bias = params.add(Parameter::new(
            format!("{name}.bias"),
            "zero",
            Tensor::zeros(&[fan_out]),
        ));
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self, params: &ParamSet) -> usize {
        params.get(self.weight).value.shape()[0]
    }

    pub fn fan_out(&self, params: &ParamSet) -> usize {
        params.get(self.weight).value.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> BoundDense {
        BoundDense {
            weight: tape.param(params, self.weight),
            bias: tape.param(params, self.bias),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    weight: NodeId,
    bias: NodeId,
    activation: Activation,
}

/// `σ(input·W + b)` for `input: [batch, in]`.
pub fn dense_forward(
    layer: &BoundDense,
    input: NodeId,
    tape: &mut Tape,
) -> Result<NodeId, NnError> {
    let z = tape.matmul(input, layer.weight)?;
    let z = tape.add_bias(z, layer.bias)?;
    Ok(layer.activation.record(tape, z))
}

/// Gated recurrent unit parameters: input weights `[in, hidden]`, recurrent
/// weights `[hidden, hidden]` and a bias per gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_candidate: ParamId,
    pub u_update: ParamId,
    pub u_reset: ParamId,
    pub u_candidate: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_candidate: ParamId,
}

impl GruParams {
    /// Xavier-uniform weights, zero biases.
    pub fn create(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let mut w = |suffix: &str, rows: usize| -> Result<ParamId, NnError> {
            let t = init_xavier_uniform(&[rows, hidden], rng)?;
            Ok(params.add(Parameter::new(
                format!("{name}.{suffix}"),
                Initializer::XavierUniform.tag(),
                t,
            )))
        };
        let w_update = w("w_update", input_dim)?;
        let w_reset = w("w_reset", input_dim)?;
        let w_candidate = w("w_candidate", input_dim)?;
        let u_update = w("u_update", hidden)?;
        let u_reset = w("u_reset", hidden)?;
        let u_candidate = w("u_candidate", hidden)?;
        let mut b = |suffix: &str| {
            params.add(Parameter::new(
                format!("{name}.{suffix}"),
                "zero",
                Tensor::zeros(&[hidden]),
            ))
        };
        Ok(Self {
            w_update,
            w_reset,
            w_candidate,
            u_update,
            u_reset,
            u_candidate,
            b_update: b("b_update"),
            b_reset: b("b_reset"),
            b_candidate: b("b_candidate"),
        })
    }

    pub fn input_dim(&self, params: &ParamSet) -> usize {
        params.get(self.w_update).value.shape()[0]
    }

    pub fn hidden(&self, params: &ParamSet) -> usize {
        params.get(self.u_update).value.shape()[0]
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_update,
            self.w_reset,
            self.w_candidate,
            self.u_update,
            self.u_reset,
            self.u_candidate,
            self.b_update,
            self.b_reset,
            self.b_candidate,
        ]
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> BoundGru {
        let ids = self.ids();
        let n = ids.map(|id| tape.param(params, id));
        BoundGru {
            w: [n[0], n[1], n[2]],
            u: [n[3], n[4], n[5]],
            b: [n[6], n[7], n[8]],
            input_dim: self.input_dim(params),
            hidden: self.hidden(params),
        }
    }
}

/// GRU parameters recorded on a particular tape; order is update, reset,
/// candidate.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    w: [NodeId; 3],
    u: [NodeId; 3],
    b: [NodeId; 3],
    input_dim: usize,
    hidden: usize,
}

impl BoundGru {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

/// One GRU step:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// h̃  = tanh(x·W_h + (r∘h)·U_h + b_h)
/// h' = (1 − z)∘h + z∘h̃
/// ```
///
/// The last line is recorded as `h + z∘(h̃ − h)`.
pub fn gru_step(
    gru: &BoundGru,
    x: NodeId,
    h_prev: NodeId,
    tape: &mut Tape,
) -> Result<NodeId, NnError> {
    let (xs, hs) = (
        tape.value(x).shape().to_vec(),
        tape.value(h_prev).shape().to_vec(),
    );
    if xs.last() != Some(&gru.input_dim)
        || hs.last() != Some(&gru.hidden)
        || tape.value(x).rows() != tape.value(h_prev).rows()
    {
        return Err(NnError::ShapeMismatch(format!(
            "gru_step: x {xs:?}, h {hs:?} for input_dim {} hidden {}",
            gru.input_dim, gru.hidden
        )));
    }
    let gate = |tape: &mut Tape, k: usize, h: NodeId| -> Result<NodeId, NnError> {
        let a = tape.matmul(x, gru.w[k])?;
        let b = tape.matmul(h, gru.u[k])?;
        let s = tape.add(a, b)?;
        tape.add_bias(s, gru.b[k])
    };
    let z = gate(tape, 0, h_prev)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, 1, h_prev)?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h_prev)?;
    let cand = gate(tape, 2, rh)?;
    let cand = tape.tanh(cand);
    let diff = tape.sub(cand, h_prev)?;
    let step = tape.mul(z, diff)?;
    tape.add(h_prev, step)
}

/// Runs a GRU over the rows of `sequence: [steps, in]` from `h0` and returns
/// every hidden state in order.
pub fn gru_sequence(
    gru: &BoundGru,
    sequence: &Tensor,
    h0: NodeId,
    tape: &mut Tape,
) -> Result<Vec<NodeId>, NnError> {
    let mut h = h0;
    let mut states = Vec::with_capacity(sequence.rows());
    for t in 0..sequence.rows() {
        let x = tape.input(sequence.slice_rows(t, t + 1));
        h = gru_step(gru, x, h, tape)?;
        states.push(h);
    }
    Ok(states)
}

/// Same recurrence as [`gru_sequence`], recorded as a single tape node that
/// holds every hidden state as one `[steps, hidden]` matrix. Much cheaper to
/// record and differentiate for long windows.
pub fn gru_states(
    gru: &BoundGru,
    sequence: NodeId,
    h0: NodeId,
    tape: &mut Tape,
) -> Result<NodeId, NnError> {
    if tape.value(sequence).cols() != gru.input_dim || tape.value(h0).cols() != gru.hidden {
        return Err(NnError::ShapeMismatch(format!(
            "gru_states: sequence {:?}, h0 {:?} for input_dim {} hidden {}",
            tape.value(sequence).shape(),
            tape.value(h0).shape(),
            gru.input_dim,
            gru.hidden
        )));
    }
    tape.gru_sequence(sequence, h0, gru.w, gru.u, gru.b)
}
