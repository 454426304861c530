use crate::autodiff::LAYER_NORM_EPS;
use crate::error::{Error, Result};
use crate::linalg::conv::{
    depthwise_conv3x3, depthwise_conv3x3_adjoint, unfold3x3, unfold3x3_adjoint,
};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Matmul,
    Hadamard,
    Add,
    Sub,
    Scale(T),
    Transpose,
    SoftmaxRows,
    KernelElu1,
    Relu,
    Tanh,
    Gelu,
    MeanRows,
    ScaleRows,
    DivRows,
    AddBias,
    SliceCols { start: usize, width: usize },
    ConcatCols,
    Unfold3x3 { h: usize, w: usize, stride: usize },
    DepthwiseConv3x3 { h: usize, w: usize },
    LayerNorm,
    CrossEntropyMean { labels: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul => "matmul",
            Op::Hadamard => "hadamard",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Scale(_) => "scale",
            Op::Transpose => "transpose",
            Op::SoftmaxRows => "softmax_rows",
            Op::KernelElu1 => "kernel_elu1",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Gelu => "gelu",
            Op::MeanRows => "mean_rows",
            Op::ScaleRows => "scale_rows",
            Op::DivRows => "div_rows",
            Op::AddBias => "add_bias",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols => "concat_cols",
            Op::Unfold3x3 { .. } => "unfold3x3",
            Op::DepthwiseConv3x3 { .. } => "depthwise_conv3x3",
            Op::LayerNorm => "layer_norm",
            Op::CrossEntropyMean { .. } => "cross_entropy_mean",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Matrix<T>,
}

/// Record of a forward computation. Single-writer while being built, then
/// immutable; `backward` takes `&self` and may run from any thread.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let k = T::from_config(0.797_884_560_802_865_4);
    let c = T::from_config(0.044715);
    let half = T::from_config(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_prime<T: Scalar>(x: T) -> T {
    let k = T::from_config(0.797_884_560_802_865_4);
    let c = T::from_config(0.044715);
    let half = T::from_config(0.5);
    let three = T::from_config(3.0);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * k * (T::one() + three * c * x * x)
}

pub fn layer_norm_forward<T: Scalar>(
    x: &Matrix<T>,
    gamma: &Matrix<T>,
    beta: &Matrix<T>,
) -> Result<Matrix<T>> {
    let c = x.cols();
    if gamma.shape() != (1, c) {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if beta.shape() != (1, c) {
        return Err(Error::shape("layer_norm", x.shape(), beta.shape()));
    }
    let eps = T::from_config(LAYER_NORM_EPS);
    let n = T::from_config(c as f64);
    let mut out = Matrix::zeros(x.rows(), c);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().fold(T::zero(), |a, b| a + b) / n;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .fold(T::zero(), |a, b| a + b)
            / n;
        let inv = T::one() / (var + eps).sqrt();
        for ch in 0..c {
            let xhat = (row[ch] - mean) * inv;
            out.set(r, ch, gamma.get(0, ch) * xhat + beta.get(0, ch));
        }
    }
    Ok(out)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id].value
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Matrix<T>) -> NodeId {
        self.nodes.push(Node { op, inputs, value });
        self.nodes.len() - 1
    }

    fn record(
        &mut self,
        op: Op<T>,
        inputs: Vec<NodeId>,
        value: Result<Matrix<T>>,
    ) -> Result<NodeId> {
        match value {
            Ok(v) => Ok(self.push(op, inputs, v)),
            Err(e) => Err(Error::AtNode {
                node: self.nodes.len(),
                op: op.name(),
                source: Box::new(e),
            }),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b));
        self.record(Op::Matmul, vec![a, b], v)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b));
        self.record(Op::Hadamard, vec![a, b], v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b));
        self.record(Op::Add, vec![a, b], v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b));
        self.record(Op::Sub, vec![a, b], v)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let v = Ok(self.value(a).scale(s));
        self.record(Op::Scale(s), vec![a], v)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Ok(self.value(a).transpose());
        self.record(Op::Transpose, vec![a], v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Ok(self.value(a).softmax_rows());
        self.record(Op::SoftmaxRows, vec![a], v)
    }

    pub fn kernel_elu1(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Ok(self.value(a).kernel_elu1());
        self.record(Op::KernelElu1, vec![a], v)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Ok(self.value(a).relu());
        self.record(Op::Relu, vec![a], v)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Ok(self.value(a).tanh_map());
        self.record(Op::Tanh, vec![a], v)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Ok(self.value(a).map(gelu_scalar));
        self.record(Op::Gelu, vec![a], v)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Ok(self.value(a).mean_rows());
        self.record(Op::MeanRows, vec![a], v)
    }

    pub fn scale_rows(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let v = self.value(a).scale_rows(self.value(s));
        self.record(Op::ScaleRows, vec![a, s], v)
    }

    pub fn div_rows(&mut self, a: NodeId, d: NodeId) -> Result<NodeId> {
        let v = self.value(a).div_rows(self.value(d));
        self.record(Op::DivRows, vec![a, d], v)
    }

    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_bias(self.value(b));
        self.record(Op::AddBias, vec![a, b], v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, width);
        self.record(Op::SliceCols { start, width }, vec![a], v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&id| self.value(id)).collect();
        let v = Matrix::concat_cols(&mats);
        self.record(Op::ConcatCols, parts.to_vec(), v)
    }

    pub fn unfold3x3(&mut self, a: NodeId, h: usize, w: usize, stride: usize) -> Result<NodeId> {
        let v = unfold3x3(self.value(a), h, w, stride);
        self.record(Op::Unfold3x3 { h, w, stride }, vec![a], v)
    }

    pub fn depthwise_conv3x3(
        &mut self,
        x: NodeId,
        weights: NodeId,
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let v = depthwise_conv3x3(self.value(x), self.value(weights), h, w);
        self.record(Op::DepthwiseConv3x3 { h, w }, vec![x, weights], v)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let v = layer_norm_forward(self.value(x), self.value(gamma), self.value(beta));
        self.record(Op::LayerNorm, vec![x, gamma, beta], v)
    }

    /// Mean cross-entropy of row-softmaxed logits against integer labels.
    /// Produces a 1x1 value.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let v = if labels.len() != lv.rows() {
            Err(Error::invalid(
                "cross_entropy_mean",
                format!("{} labels for {} rows", labels.len(), lv.rows()),
            ))
        } else if labels.iter().any(|&l| l >= lv.cols()) {
            Err(Error::invalid("cross_entropy_mean", "label out of range"))
        } else {
            let probs = lv.softmax_rows();
            let n = T::from_config(lv.rows() as f64);
            let loss = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| -(probs.get(i, l).ln()))
                .fold(T::zero(), |a, b| a + b)
                / n;
            Matrix::from_vec(1, 1, vec![loss])
        };
        self.record(
            Op::CrossEntropyMean {
                labels: labels.to_vec(),
            },
            vec![logits],
            v,
        )
    }

    /// Gradients of <seed_grad, output> with respect to every node. Leaves
    /// that never contribute to the output get exact zero matrices.
    pub fn backward(&self, output: NodeId, seed_grad: &Matrix<T>) -> Result<Gradients<T>> {
        if seed_grad.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "backward",
                seed_grad.shape(),
                self.value(output).shape(),
            ));
        }
        let mut adj: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        adj[output] = Some(seed_grad.clone());

        for id in (0..=output).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                adj[id] = Some(g);
                continue;
            }
            let contributions = self.op_backward(node, &g)?;
            adj[id] = Some(g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                match &mut adj[*input] {
                    Some(acc) => *acc = acc.add(&contrib)?,
                    slot => *slot = Some(contrib),
                }
            }
        }

        // Materialize zeros for untouched leaves.
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && adj[id].is_none() {
                adj[id] = Some(Matrix::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(Gradients { grads: adj })
    }

    fn op_backward(&self, node: &Node<T>, g: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        let input = |k: usize| self.value(node.inputs[k]);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Matmul => {
                let (a, b) = (input(0), input(1));
                vec![g.matmul(&b.transpose())?, a.transpose().matmul(g)?]
            }
            Op::Hadamard => {
                let (a, b) = (input(0), input(1));
                vec![g.hadamard(b)?, g.hadamard(a)?]
            }
            Op::Add => vec![g.clone(), g.clone()],
            Op::Sub => vec![g.clone(), g.scale(-T::one())],
            Op::Scale(s) => vec![g.scale(*s)],
            Op::Transpose => vec![g.transpose()],
            Op::SoftmaxRows => {
                let y = &node.value;
                let mut dx = g.hadamard(y)?;
                for r in 0..y.rows() {
                    let dot = dx.row(r).iter().copied().fold(T::zero(), |a, b| a + b);
                    for c in 0..y.cols() {
                        dx.set(r, c, dx.get(r, c) - dot * y.get(r, c));
                    }
                }
                vec![dx]
            }
            Op::KernelElu1 => {
                let x = input(0);
                vec![g.hadamard(&x.map(|v| if v > T::zero() { T::one() } else { v.exp() }))?]
            }
            Op::Relu => {
                let x = input(0);
                vec![g.hadamard(&x.map(|v| if v > T::zero() { T::one() } else { T::zero() }))?]
            }
            Op::Tanh => {
                let y = &node.value;
                vec![g.hadamard(&y.map(|v| T::one() - v * v))?]
            }
            Op::Gelu => {
                let x = input(0);
                vec![g.hadamard(&x.map(gelu_prime))?]
            }
            Op::MeanRows => {
                let x = input(0);
                let inv_n = T::one() / T::from_config(x.rows() as f64);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        dx.set(r, c, g.get(0, c) * inv_n);
                    }
                }
                vec![dx]
            }
            Op::ScaleRows => {
                let (a, s) = (input(0), input(1));
                let da = g.scale_rows(s)?;
                let mut ds = Matrix::zeros(a.rows(), 1);
                for r in 0..a.rows() {
                    let dot = g
                        .row(r)
                        .iter()
                        .zip(a.row(r))
                        .map(|(&x, &y)| x * y)
                        .fold(T::zero(), |acc, v| acc + v);
                    ds.set(r, 0, dot);
                }
                vec![da, ds]
            }
            Op::DivRows => {
                let d = input(1);
                let y = &node.value;
                let da = g.div_rows(d)?;
                let mut dd = Matrix::zeros(d.rows(), 1);
                for r in 0..y.rows() {
                    let dot = g
                        .row(r)
                        .iter()
                        .zip(y.row(r))
                        .map(|(&x, &v)| x * v)
                        .fold(T::zero(), |acc, v| acc + v);
                    dd.set(r, 0, -dot / d.get(r, 0));
                }
                vec![da, dd]
            }
            Op::AddBias => {
                let mut db = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        db.set(0, c, db.get(0, c) + g.get(r, c));
                    }
                }
                vec![g.clone(), db]
            }
            Op::SliceCols { start, width } => {
                let a = input(0);
                let mut da = Matrix::zeros(a.rows(), a.cols());
                for r in 0..g.rows() {
                    for c in 0..*width {
                        da.set(r, start + c, g.get(r, c));
                    }
                }
                vec![da]
            }
            Op::ConcatCols => {
                let mut out = Vec::with_capacity(node.inputs.len());
                let mut offset = 0;
                for &inp in &node.inputs {
                    let w = self.value(inp).cols();
                    out.push(g.slice_cols(offset, w)?);
                    offset += w;
                }
                out
            }
            Op::Unfold3x3 { h, w, stride } => {
                let x = input(0);
                vec![unfold3x3_adjoint(g, *h, *w, x.cols(), *stride)?]
            }
            Op::DepthwiseConv3x3 { h, w } => {
                let (x, wt) = (input(0), input(1));
                let (dx, dw) = depthwise_conv3x3_adjoint(g, x, wt, *h, *w)?;
                vec![dx, dw]
            }
            Op::LayerNorm => {
                let (x, gamma) = (input(0), input(1));
                let c = x.cols();
                let n = T::from_config(c as f64);
                let eps = T::from_config(LAYER_NORM_EPS);
                let mut dx = Matrix::zeros(x.rows(), c);
                let mut dgamma = Matrix::zeros(1, c);
                let mut dbeta = Matrix::zeros(1, c);
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let mean = row.iter().copied().fold(T::zero(), |a, b| a + b) / n;
                    let var = row
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .fold(T::zero(), |a, b| a + b)
                        / n;
                    let inv = T::one() / (var + eps).sqrt();
                    let xhat: Vec<T> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let dxhat: Vec<T> = (0..c)
                        .map(|ch| g.get(r, ch) * gamma.get(0, ch))
                        .collect();
                    let mean_dxhat =
                        dxhat.iter().copied().fold(T::zero(), |a, b| a + b) / n;
                    let mean_dxhat_xhat = dxhat
                        .iter()
                        .zip(&xhat)
                        .map(|(&a, &b)| a * b)
                        .fold(T::zero(), |a, b| a + b)
                        / n;
                    for ch in 0..c {
                        dx.set(
                            r,
                            ch,
                            inv * (dxhat[ch] - mean_dxhat - xhat[ch] * mean_dxhat_xhat),
                        );
                        dgamma.set(0, ch, dgamma.get(0, ch) + g.get(r, ch) * xhat[ch]);
                        dbeta.set(0, ch, dbeta.get(0, ch) + g.get(r, ch));
                    }
                }
                vec![dx, dgamma, dbeta]
            }
            Op::CrossEntropyMean { labels } => {
                let logits = input(0);
                let probs = logits.softmax_rows();
                let scale = g.get(0, 0) / T::from_config(logits.rows() as f64);
                let mut dl = probs.scale(scale);
                for (i, &l) in labels.iter().enumerate() {
                    dl.set(i, l, dl.get(i, l) - scale);
                }
                vec![dl]
            }
        })
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}
