use std::collections::HashMap;

use super::{ParamId, ParamStore, Rng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `x[r×c] + b[r]` broadcast over columns.
    AddColumn(NodeId, NodeId),
    Gelu(NodeId),
    /// Mask already holds `0` or `1/(1-rate)`.
    Dropout(NodeId, Vec<f64>),
    /// `z[i][j] = x[i][(j + offsets[i]) mod N]`.
    Rotate(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    MeanCols(NodeId),
    /// Column vector `col[r]` placed before the columns of `x[r×c]`.
    PrependCol { col: NodeId, x: NodeId },
    SelectCol(NodeId, usize),
    /// Columns of `table[d×V]` picked by symbol index.
    Gather(NodeId, Vec<usize>),
    Sum(NodeId),
    Mse { pred: NodeId, target: Tensor },
    WeightedCrossEntropy {
        logits: NodeId,
        label: usize,
        weight: f64,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddColumn(a, b) => {
                vec![*a, *b]
            }
            Op::PrependCol { col, x } => vec![*col, *x],
            Op::Gelu(x)
            | Op::Dropout(x, _)
            | Op::Rotate(x, _)
            | Op::SliceCols { x, .. }
            | Op::MeanCols(x)
            | Op::SelectCol(x, _)
            | Op::Gather(x, _)
            | Op::Sum(x)
            | Op::Mse { pred: x, .. }
            | Op::WeightedCrossEntropy { logits: x, .. } => vec![*x],
            Op::ConcatCols(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded computation.
///
/// Parameters enter through [`Graph::param`], which returns the same node
/// for repeated requests so their gradients accumulate in one place.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

/// `d/dx [x·Φ(x)] = Φ(x) + x·φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

impl Graph {
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

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant or differentiable input that is not a parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let node = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        for (v, w) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *v *= w;
        }
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_column(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.numel() != xv.rows() {
            return Err(Error::Dimension {
                op: "add_column",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let c = xv.cols();
        let mut value = xv.clone();
        for (row, &b) in value.data_mut().chunks_mut(c).zip(bv.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.push(value, Op::AddColumn(x, bias)))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        self.push(value, Op::Gelu(x))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`, so inference
    /// (`training == false`) is the identity.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut Rng, training: bool) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.uniform() < rate { 0.0 } else { scale })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(value, Op::Dropout(x, mask)))
    }

    /// Per-row circular shift: `z[i][j] = x[i][(j + offsets[i]) mod N]`.
    pub fn rotate(&mut self, x: NodeId, offsets: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let (d, n) = (xv.rows(), xv.cols());
        if offsets.len() != d {
            return Err(Error::Dimension {
                op: "rotate",
                left: xv.shape().to_vec(),
                right: vec![offsets.len()],
            });
        }
        let offsets: Vec<usize> = offsets.iter().map(|o| o % n).collect();
        let mut out = vec![0.0; d * n];
        for (i, &o) in offsets.iter().enumerate() {
            let src = &xv.data()[i * n..(i + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            dst[..n - o].copy_from_slice(&src[o..]);
            dst[n - o..].copy_from_slice(&src[..o]);
        }
        let value = Tensor::new(vec![d, n], out)?;
        Ok(self.push(value, Op::Rotate(x, offsets)))
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let d = self.value(xs[0]).rows();
        if let Some(bad) = xs.iter().find(|&&x| self.value(x).rows() != d) {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: self.value(xs[0]).shape().to_vec(),
                right: self.value(*bad).shape().to_vec(),
            });
        }
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = Vec::with_capacity(d * total);
        for i in 0..d {
            for &x in xs {
                let v = self.value(x);
                let c = v.cols();
                out.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::new(vec![d, total], out)?;
        Ok(self.push(value, Op::ConcatCols(xs.to_vec())))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (d, n) = (xv.rows(), xv.cols());
        if len == 0 || start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(d * len);
        for i in 0..d {
            out.extend_from_slice(&xv.data()[i * n + start..i * n + start + len]);
        }
        let value = Tensor::new(vec![d, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    /// Column mean of a `d×N` matrix, returned as `d×1`.
    pub fn mean_cols(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let (d, n) = (xv.rows(), xv.cols());
        let out: Vec<f64> = xv
            .data()
            .chunks(n)
            .map(|row| row.iter().sum::<f64>() / n as f64)
            .collect();
        let value = Tensor::new(vec![d, 1], out).expect("non-empty");
        self.push(value, Op::MeanCols(x))
    }

    pub fn prepend_col(&mut self, col: NodeId, x: NodeId) -> Result<NodeId> {
        let (cv, xv) = (self.value(col), self.value(x));
        let (d, n) = (xv.rows(), xv.cols());
        if cv.numel() != d {
            return Err(Error::Dimension {
                op: "prepend_col",
                left: cv.shape().to_vec(),
                right: xv.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(d * (n + 1));
        for i in 0..d {
            out.push(cv.data()[i]);
            out.extend_from_slice(&xv.data()[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![d, n + 1], out)?;
        Ok(self.push(value, Op::PrependCol { col, x }))
    }

    pub fn select_col(&mut self, x: NodeId, j: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if j >= xv.cols() {
            return Err(Error::Dimension {
                op: "select_col",
                left: xv.shape().to_vec(),
                right: vec![j],
            });
        }
        let value = Tensor::new(vec![xv.rows(), 1], xv.column(j))?;
        Ok(self.push(value, Op::SelectCol(x, j)))
    }

    pub fn gather_cols(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (d, v) = (tv.rows(), tv.cols());
        if indices.is_empty() {
            return Err(Error::Parameter("empty symbol sequence".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&s| s >= v) {
            return Err(Error::Parameter(format!(
                "symbol index {bad} outside vocabulary of size {v}"
            )));
        }
        let n = indices.len();
        let mut out = Vec::with_capacity(d * n);
        for i in 0..d {
            let row = &tv.data()[i * v..(i + 1) * v];
            out.extend(indices.iter().map(|&s| row[s]));
        }
        let value = Tensor::new(vec![d, n], out)?;
        Ok(self.push(value, Op::Gather(table, indices.to_vec())))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Mean of squared differences against a constant target.
    pub fn mse(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.numel() != target.numel() {
            return Err(Error::Dimension {
                op: "mse",
                left: pv.shape().to_vec(),
                right: target.shape().to_vec(),
            });
        }
        let loss = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / pv.numel() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// `-weight · log softmax(logits)[label]`, stabilized by the max logit.
    pub fn weighted_cross_entropy(&mut self, logits: NodeId, label: usize, weight: f64) -> Result<NodeId> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(Error::Parameter(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let log_prob = z[label] - max - total.ln();
        let probs = exps.iter().map(|e| e / total).collect();
        Ok(self.push(
            Tensor::scalar(-weight * log_prob),
            Op::WeightedCrossEntropy {
                logits,
                label,
                weight,
                probs,
            },
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, output: NodeId) -> Gradients {
        assert_eq!(
            self.value(output).numel(),
            1,
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (input, contribution) in self.local_grads(node, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[idx] = Some(g);
        }

        Gradients { grads }
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(NodeId, Tensor)> {
        match &node.op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = g.matmul_t(bv).reshape(av.shape().to_vec()).unwrap();
                let gb = av.t_matmul(g).reshape(bv.shape().to_vec()).unwrap();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let mut ga = g.clone();
                for (v, w) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                    *v *= w;
                }
                let mut gb = g.clone();
                for (v, w) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *v *= w;
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddColumn(x, b) => {
                let c = g.cols();
                let sums: Vec<f64> = g.data().chunks(c).map(|row| row.iter().sum()).collect();
                let gb = Tensor::new(self.value(*b).shape().to_vec(), sums).unwrap();
                vec![(*x, g.clone()), (*b, gb)]
            }
            Op::Gelu(x) => {
                let mut gx = g.clone();
                for (v, xi) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *v *= gelu_grad(*xi);
                }
                vec![(*x, gx)]
            }
            Op::Dropout(x, mask) => {
                let mut gx = g.clone();
                for (v, m) in gx.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                vec![(*x, gx)]
            }
            Op::Rotate(x, offsets) => {
                let (d, n) = (g.rows(), g.cols());
                let mut out = vec![0.0; d * n];
                for (i, &o) in offsets.iter().enumerate() {
                    let src = &g.data()[i * n..(i + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    dst[o..].copy_from_slice(&src[..n - o]);
                    dst[..o].copy_from_slice(&src[n - o..]);
                }
                vec![(*x, Tensor::new(vec![d, n], out).unwrap())]
            }
            Op::ConcatCols(xs) => {
                let (d, total) = (g.rows(), g.cols());
                let mut start = 0;
                xs.iter()
                    .map(|&x| {
                        let c = self.value(x).cols();
                        let mut out = Vec::with_capacity(d * c);
                        for i in 0..d {
                            out.extend_from_slice(&g.data()[i * total + start..i * total + start + c]);
                        }
                        start += c;
                        (x, Tensor::new(self.value(x).shape().to_vec(), out).unwrap())
                    })
                    .collect()
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (d, n) = (xv.rows(), xv.cols());
                let len = g.cols();
                let mut gx = Tensor::zeros(xv.shape());
                for i in 0..d {
                    gx.data_mut()[i * n + start..i * n + start + len]
                        .copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                vec![(*x, gx)]
            }
            Op::MeanCols(x) => {
                let xv = self.value(*x);
                let n = xv.cols();
                let mut gx = Tensor::zeros(xv.shape());
                for (row, &gi) in gx.data_mut().chunks_mut(n).zip(g.data()) {
                    row.fill(gi / n as f64);
                }
                vec![(*x, gx)]
            }
            Op::PrependCol { col, x } => {
                let xv = self.value(*x);
                let (d, n) = (xv.rows(), xv.cols());
                let mut gc = Vec::with_capacity(d);
                let mut gx = Vec::with_capacity(d * n);
                for i in 0..d {
                    let row = &g.data()[i * (n + 1)..(i + 1) * (n + 1)];
                    gc.push(row[0]);
                    gx.extend_from_slice(&row[1..]);
                }
                vec![
                    (*col, Tensor::new(self.value(*col).shape().to_vec(), gc).unwrap()),
                    (*x, Tensor::new(vec![d, n], gx).unwrap()),
                ]
            }
            Op::SelectCol(x, j) => {
                let xv = self.value(*x);
                let n = xv.cols();
                let mut gx = Tensor::zeros(xv.shape());
                for (i, &gi) in g.data().iter().enumerate() {
                    gx.data_mut()[i * n + j] = gi;
                }
                vec![(*x, gx)]
            }
            Op::Gather(table, indices) => {
                let tv = self.value(*table);
                let v = tv.cols();
                let n = indices.len();
                let mut gt = Tensor::zeros(tv.shape());
                for i in 0..g.rows() {
                    for (j, &s) in indices.iter().enumerate() {
                        gt.data_mut()[i * v + s] += g.data()[i * n + j];
                    }
                }
                vec![(*table, gt)]
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                vec![(*x, Tensor::full(xv.shape(), g.data()[0]))]
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let scale = 2.0 * g.data()[0] / pv.numel() as f64;
                let mut gp = pv.clone();
                for (v, t) in gp.data_mut().iter_mut().zip(target.data()) {
                    *v = scale * (*v - t);
                }
                vec![(*pred, gp)]
            }
            Op::WeightedCrossEntropy {
                logits,
                label,
                weight,
                probs,
            } => {
                let scale = weight * g.data()[0];
                let mut gl: Vec<f64> = probs.iter().map(|p| scale * p).collect();
                gl[*label] -= scale;
                vec![(
                    *logits,
                    Tensor::new(self.value(*logits).shape().to_vec(), gl).unwrap(),
                )]
            }
        }
    }

    /// Parameters that appear in this graph, with their node ids.
    pub fn param_nodes(&self) -> impl Iterator<Item = (ParamId, NodeId)> + '_ {
        self.params.iter().map(|(&p, &n)| (p, n))
    }

    #[doc(hidden)]
    pub fn inputs_of(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of every parameter in `store`; parameters the graph never
    /// touched get exact zeros.
    pub fn for_params(&self, graph: &Graph, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (pid, node) in graph.param_nodes() {
            if let Some(g) = self.get(node) {
                out[pid.index()].add_assign(g);
            }
        }
        out
    }
}
