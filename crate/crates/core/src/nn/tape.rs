//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Nodes
//! are appended in evaluation order, so the record is topologically sorted
//! by construction and the backward sweep is a single reverse walk over it.

use super::recurrent::{self, GruCache, GruWeights};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{NnError, ParamId, ParamSet, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Identity(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    Abs(NodeId),
    MaxScalar(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    GruSequence(Box<GruRecord>),
    Mean(NodeId),
    Sum(NodeId),
}

#[derive(Debug, Clone)]
struct GruRecord {
    x: NodeId,
    h0: NodeId,
    w: [NodeId; 3],
    u: [NodeId; 3],
    b: [NodeId; 3],
    cache: GruCache,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant. Constants receive no gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Records the current value of a parameter. Gradients flowing into this
    /// node are written back to the parameter by [`Tape::backward`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        self.push(Op::Param(id), params.get(id).value.clone())
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(), NnError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NnError::ShapeMismatch(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (rows, k, n) = (va.rows(), va.cols(), vb.cols());
        if vb.rows() != k {
            return Err(NnError::ShapeMismatch(format!(
                "matmul: {:?} · {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = vec![0.0; rows * n];
        matmul_acc(va.data(), vb.data(), &mut out, rows, k, n);
        let value = Tensor::from_parts_unchecked(vec![rows, n], out);
        Ok(self.push(Op::MatMul(a, b), value))
    }

    fn zip_op(
        &mut self,
        a: NodeId,
        b: NodeId,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, NnError> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        Ok(self.push(op, value))
    }

    fn map_op(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        self.push(op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a bias vector of length `cols` to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(bias));
        let n = va.cols();
        if vb.len() != n {
            return Err(NnError::ShapeMismatch(format!(
                "add_bias: {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut data = va.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, &b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let value = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        Ok(self.push(Op::AddBias(a, bias), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.map_op(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map_op(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn identity(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, |x| x, Op::Identity(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, super::math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise `|x|`; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.map_op(a, f64::abs, Op::Abs(a))
    }

    /// Elementwise `max(x, c)`. On a tie the gradient flows to `x`.
    pub fn max_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map_op(a, move |x| if x >= c { x } else { c }, Op::MaxScalar(a))
    }

    /// Concatenates along the last axis. Every part must have the same rows.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::ShapeMismatch("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(NnError::ShapeMismatch(format!(
                "concat: {} rows vs {:?}",
                rows,
                self.value(*bad).shape()
            )));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let v = self.value(*p);
                let c = v.cols();
                data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let value = Tensor::from_parts_unchecked(vec![rows, total], data);
        Ok(self.push(Op::Concat(parts.to_vec()), value))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, NnError> {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        if start >= end || end > cols {
            return Err(NnError::ShapeMismatch(format!(
                "slice {start}..{end} of {cols} columns"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * cols + start..r * cols + end]);
        }
        let value = Tensor::from_parts_unchecked(vec![rows, w], data);
        Ok(self.push(Op::SliceCols(a, start), value))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, NnError> {
        let va = self.value(a);
        if start >= end || end > va.rows() {
            return Err(NnError::ShapeMismatch(format!(
                "slice {start}..{end} of {} rows",
                va.rows()
            )));
        }
        let value = va.slice_rows(start, end);
        Ok(self.push(Op::SliceRows(a, start), value))
    }

    /// A GRU run over every row of `x: [steps, in]` from `h0: [1, hidden]`,
    /// recorded as one node holding all hidden states `[steps, hidden]`.
    /// Gate order in `w`, `u`, `b` is update, reset, candidate.
    pub(crate) fn gru_sequence(
        &mut self,
        x: NodeId,
        h0: NodeId,
        w: [NodeId; 3],
        u: [NodeId; 3],
        b: [NodeId; 3],
    ) -> Result<NodeId, NnError> {
        let (vx, vh) = (self.value(x), self.value(h0));
        let (steps, input_dim, hidden) = (vx.rows(), vx.cols(), vh.cols());
        let shapes_ok = steps > 0
            && vh.rows() == 1
            && w.iter()
                .all(|id| self.value(*id).shape() == [input_dim, hidden])
            && u.iter()
                .all(|id| self.value(*id).shape() == [hidden, hidden])
            && b.iter().all(|id| self.value(*id).len() == hidden);
        if !shapes_ok {
            return Err(NnError::ShapeMismatch(format!(
                "gru_sequence: x {:?}, h0 {:?}",
                vx.shape(),
                vh.shape()
            )));
        }
        let weights = self.gru_weights(&w, &u, &b, input_dim, hidden);
        let (states, cache) = recurrent::forward(&weights, vx.data(), steps, vh.data());
        let value = Tensor::from_parts_unchecked(vec![steps, hidden], states);
        let record = GruRecord {
            x,
            h0,
            w,
            u,
            b,
            cache,
        };
        Ok(self.push(Op::GruSequence(Box::new(record)), value))
    }

    fn gru_weights(
        &self,
        w: &[NodeId; 3],
        u: &[NodeId; 3],
        b: &[NodeId; 3],
        input_dim: usize,
        hidden: usize,
    ) -> GruWeights<'_> {
        GruWeights {
            w: w.map(|id| self.value(id).data()),
            u: u.map(|id| self.value(id).data()),
            b: b.map(|id| self.value(id).data()),
            input_dim,
            hidden,
        }
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let m = va.data().iter().sum::<f64>() / va.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Propagates `∂loss/∂node` back through the tape and overwrites every
    /// parameter gradient with `∂loss/∂parameter`. Parameters the loss does
    /// not depend on end up with a zero gradient.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<(), NnError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::NotScalarLoss(lv.shape().to_vec()));
        }
        params.zero_grads();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    let pg = params.get_mut(*pid).grad.data_mut();
                    for (p, v) in pg.iter_mut().zip(&g) {
                        *p += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (rows, k, n) = (va.rows(), va.cols(), vb.cols());
                    {
                        let ga = grad_slot(&mut grads, *a, va.len());
                        matmul_bt_acc(&g, vb.data(), ga, rows, k, n);
                    }
                    let gb = grad_slot(&mut grads, *b, vb.len());
                    matmul_at_acc(va.data(), &g, gb, rows, k, n);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddBias(a, bias) => {
                    accumulate(&mut grads, *a, &g);
                    let n = self.value(*bias).len();
                    let gb = grad_slot(&mut grads, *bias, n);
                    for row in g.chunks_exact(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let gb = grad_slot(&mut grads, *b, g.len());
                    for (o, v) in gb.iter_mut().zip(&g) {
                        *o -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    zip_accumulate(&mut grads, *a, &g, vb, |gi, y| gi * y);
                    zip_accumulate(&mut grads, *b, &g, va, |gi, x| gi * x);
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    zip_accumulate(&mut grads, *a, &g, vb, |gi, y| gi / y);
                    let gb = grad_slot(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for (o, v) in ga.iter_mut().zip(&g) {
                        *o += v * f;
                    }
                }
                Op::AddScalar(a) | Op::Identity(a) => accumulate(&mut grads, *a, &g),
                Op::Tanh(a) => {
                    let y = node.value.data();
                    zip_accumulate(&mut grads, *a, &g, y, |gi, t| gi * (1.0 - t * t));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    zip_accumulate(&mut grads, *a, &g, y, |gi, s| gi * s * (1.0 - s));
                }
                Op::Square(a) => {
                    let x = self.value(*a).data();
                    zip_accumulate(&mut grads, *a, &g, x, |gi, x| 2.0 * gi * x);
                }
                Op::Abs(a) => {
                    let x = self.value(*a).data();
                    zip_accumulate(&mut grads, *a, &g, x, |gi, x| {
                        if x > 0.0 {
                            gi
                        } else if x < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    });
                }
                Op::MaxScalar(a) => {
                    // Output equals input exactly when the input won (ties included).
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        if x[i] == y[i] {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let v = self.value(*p);
                        let c = v.cols();
                        let gp = grad_slot(&mut grads, *p, v.len());
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            for (o, s) in gp[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *o += s;
                            }
                        }
                        offset += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let (rows, cols) = (va.rows(), va.cols());
                    let w = node.value.cols();
                    let ga = grad_slot(&mut grads, *a, va.len());
                    for r in 0..rows {
                        for c in 0..w {
                            ga[r * cols + start + c] += g[r * w + c];
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let va = self.value(*a);
                    let offset = start * va.cols();
                    let ga = grad_slot(&mut grads, *a, va.len());
                    for (o, v) in ga[offset..offset + g.len()].iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::GruSequence(rec) => {
                    let vx = self.value(rec.x);
                    let (steps, input_dim, hidden) = (vx.rows(), vx.cols(), node.value.cols());
                    let weights = self.gru_weights(&rec.w, &rec.u, &rec.b, input_dim, hidden);
                    let d = recurrent::backward(
                        &weights,
                        vx.data(),
                        steps,
                        self.value(rec.h0).data(),
                        node.value.data(),
                        &rec.cache,
                        &g,
                    );
                    accumulate(&mut grads, rec.x, &d.x);
                    accumulate(&mut grads, rec.h0, &d.h0);
                    for k in 0..3 {
                        accumulate(&mut grads, rec.w[k], &d.w[k]);
                        accumulate(&mut grads, rec.u[k], &d.u[k]);
                        accumulate(&mut grads, rec.b[k], &d.b[k]);
                    }
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let share = g[0] / n as f64;
                    let ga = grad_slot(&mut grads, *a, n);
                    for o in ga.iter_mut() {
                        *o += share;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let ga = grad_slot(&mut grads, *a, n);
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
        }
        params.mark_grads_fresh();
        Ok(())
    }
}

pub(crate) use super::math::sigmoid;

fn grad_slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    let slot = grad_slot(grads, id, g.len());
    for (o, v) in slot.iter_mut().zip(g) {
        *o += v;
    }
}

fn zip_accumulate(
    grads: &mut [Option<Vec<f64>>],
    id: NodeId,
    g: &[f64],
    other: &[f64],
    f: impl Fn(f64, f64) -> f64,
) {
    let slot = grad_slot(grads, id, g.len());
    for ((o, &gi), &x) in slot.iter_mut().zip(g).zip(other) {
        *o += f(gi, x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameter;

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::row(vec![1.0, 2.0]).unwrap());
        let mut params = ParamSet::new();
        assert!(matches!(
            tape.backward(x, &mut params),
            Err(NnError::NotScalarLoss(_))
        ));
    }

    #[test]
    fn disconnected_param_gets_zero_grad() {
        let mut params = ParamSet::new();
        let used = params.add(Parameter::new("used", "zero", Tensor::scalar(2.0)));
        let unused = params.add(Parameter::new("unused", "zero", Tensor::scalar(5.0)));
        params.get_mut(unused).grad.data_mut()[0] = 9.0;
        let mut tape = Tape::new();
        let w = tape.param(&params, used);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(used).grad.data()[0], 4.0);
        assert_eq!(params.get(unused).grad.data()[0], 0.0);
    }

    #[test]
    fn max_tie_routes_to_first_argument() {
        let mut params = ParamSet::new();
        let id = params.add(Parameter::new("x", "zero", Tensor::scalar(0.5)));
        let mut tape = Tape::new();
        let x = tape.param(&params, id);
        let m = tape.max_scalar(x, 0.5);
        let loss = tape.sum(m);
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(id).grad.data()[0], 1.0);
    }

    #[test]
    fn abs_subgradient_at_zero() {
        let mut params = ParamSet::new();
        let id = params.add(Parameter::new("x", "zero", Tensor::scalar(0.0)));
        let mut tape = Tape::new();
        let x = tape.param(&params, id);
        let a = tape.abs(x);
        let loss = tape.sum(a);
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(id).grad.data()[0], 0.0);
    }

    #[test]
    fn reused_param_accumulates() {
        // loss = sum(w * w) built from two separate param nodes.
        let mut params = ParamSet::new();
        let id = params.add(Parameter::new(
            "w",
            "zero",
            Tensor::row(vec![1.0, -3.0]).unwrap(),
        ));
        let mut tape = Tape::new();
        let a = tape.param(&params, id);
        let b = tape.param(&params, id);
        let m = tape.mul(a, b).unwrap();
        let loss = tape.sum(m);
        tape.backward(loss, &mut params).unwrap();
        assert_eq!(params.get(id).grad.data(), &[2.0, -6.0]);
    }

    #[test]
    fn shape_errors_surface() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(&[2, 3]));
        let b = tape.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(NnError::ShapeMismatch(_))));
        let c = tape.input(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(a, c), Err(NnError::ShapeMismatch(_))));
        assert!(tape.slice_cols(a, 2, 4).is_err());
    }
}
