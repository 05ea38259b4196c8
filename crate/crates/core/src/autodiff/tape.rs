//! Wengert tape: every forward op appends a node, backward replays them in reverse.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{self, PatchGeom};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Controls dropout: active in `Train`, identity in `Eval`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Matmul { a: Var, b: Var, n: usize, k: usize, m: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    /// `x` viewed as `[outer, c, inner]`, `bias` of length `c`.
    AddBias { x: Var, bias: Var, c: usize, inner: usize },
    Hadamard { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Dropout { x: Var, mask: Vec<f64> },
    Grl { x: Var, lambda: f64 },
    Im2col { x: Var, geom: PatchGeom },
    RowsToChannels { x: Var, n: usize, c: usize, hw: usize },
    AvgPool2 { x: Var, planes: usize, h: usize, w: usize },
    Gap { x: Var, hw: usize },
    Softmax { x: Var, cols: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Bce { p: Var, target: f64, eps: f64 },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

/// Records executed operations in topological order.
///
/// Leaves created with `requires_grad` receive accumulated gradients from
/// [`Tape::backward`]; intermediate gradients are transient.
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    mode: Mode,
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradient. Also serves as `detach`.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, present after a backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Smallest `|x|` over all ReLU inputs recorded so far.
    pub fn min_relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { x } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|v| v.abs()))
            .reduce(f64::min)
    }

    /// Which ReLU inputs are positive, over all ReLU nodes in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu { x } => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Backpropagates from a one-element `loss`, accumulating (`+=`) into the
    /// gradient slot of every leaf that requires grad. Leaves the loss does not
    /// reach get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads = self.sweep(loss, vec![1.0], 0, false);
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let slot = node
                .grad
                .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
            if let Some(g) = grads[i].take() {
                for (s, v) in slot.data_mut().iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian product of `output` against `seed`, evaluated at the
    /// nodes in `wrt`. Leaf gradient slots are untouched, and nodes recorded
    /// before the earliest `wrt` node are not visited.
    pub fn gradient(&self, output: Var, seed: &Tensor, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::dim(
                "gradient",
                format!("seed {:?} vs output {:?}", seed.shape(), out_shape),
            ));
        }
        let lo = wrt.iter().map(|v| v.0).min().unwrap_or(output.0);
        let grads = self.sweep(output, seed.data().to_vec(), lo, true);
        Ok(wrt
            .iter()
            .map(|v| {
                let shape = self.nodes[v.0].value.shape();
                match &grads[v.0] {
                    Some(g) => Tensor::new(shape.to_vec(), g.clone()).expect("gradient shape"),
                    None => Tensor::zeros(shape),
                }
            })
            .collect())
    }

    fn sweep(&self, output: Var, seed: Vec<f64>, lo: usize, all: bool) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for i in (lo..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, lo, all);
            grads[i] = Some(g);
        }
        grads
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], lo: usize, all: bool) {
        let wants = |v: Var| v.0 >= lo && (all || self.nodes[v.0].requires_grad);
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, contrib: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contrib),
        };
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Matmul { a, b, n, k, m } => {
                if wants(a) {
                    acc(a, kernels::matmul_bt(g, val(b), n, k, m));
                }
                if wants(b) {
                    acc(b, kernels::matmul_at(val(a), g, n, k, m));
                }
            }
            &Op::Transpose { x, rows, cols } => {
                if wants(x) {
                    acc(x, kernels::transpose(g, cols, rows));
                }
            }
            &Op::Reshape { x } => {
                if wants(x) {
                    acc(x, g.to_vec());
                }
            }
            &Op::Add { a, b } => {
                if wants(a) {
                    acc(a, g.to_vec());
                }
                if wants(b) {
                    acc(b, g.to_vec());
                }
            }
            &Op::AddBias { x, bias, c, inner } => {
                if wants(x) {
                    acc(x, g.to_vec());
                }
                if wants(bias) {
                    let mut gb = vec![0.0; c];
                    for (j, chunk) in g.chunks(inner).enumerate() {
                        gb[j % c] += chunk.iter().sum::<f64>();
                    }
                    acc(bias, gb);
                }
            }
            &Op::Hadamard { a, b } => {
                if wants(a) {
                    acc(a, g.iter().zip(val(b)).map(|(g, b)| g * b).collect());
                }
                if wants(b) {
                    acc(b, g.iter().zip(val(a)).map(|(g, a)| g * a).collect());
                }
            }
            &Op::Scale { x, factor } => {
                if wants(x) {
                    acc(x, g.iter().map(|g| g * factor).collect());
                }
            }
            &Op::Sum { x } => {
                if wants(x) {
                    acc(x, vec![g[0]; val(x).len()]);
                }
            }
            &Op::Relu { x } => {
                if wants(x) {
                    let gx = g
                        .iter()
                        .zip(val(x))
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(x, gx);
                }
            }
            &Op::Sigmoid { x } => {
                if wants(x) {
                    acc(x, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect());
                }
            }
            &Op::Clamp { x, lo: low, hi } => {
                if wants(x) {
                    let gx = g
                        .iter()
                        .zip(val(x))
                        .map(|(g, &v)| if v >= low && v <= hi { *g } else { 0.0 })
                        .collect();
                    acc(x, gx);
                }
            }
            Op::Dropout { x, mask } => {
                if wants(*x) {
                    acc(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect());
                }
            }
            &Op::Grl { x, lambda } => {
                if wants(x) {
                    acc(x, g.iter().map(|g| -lambda * g).collect());
                }
            }
            &Op::Im2col { x, geom } => {
                if wants(x) {
                    acc(x, kernels::col2im(g, geom));
                }
            }
            &Op::RowsToChannels { x, n, c, hw } => {
                if wants(x) {
                    acc(x, kernels::channels_to_rows(g, n, c, hw));
                }
            }
            &Op::AvgPool2 { x, planes, h, w } => {
                if wants(x) {
                    let (oh, ow) = (h / 2, w / 2);
                    let mut gx = vec![0.0; planes * h * w];
                    for p in 0..planes {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = 0.25 * g[(p * oh + oy) * ow + ox];
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    gx[(p * h + 2 * oy + dy) * w + 2 * ox + dx] += gv;
                                }
                            }
                        }
                    }
                    acc(x, gx);
                }
            }
            &Op::Gap { x, hw } => {
                if wants(x) {
                    let scale = 1.0 / hw as f64;
                    acc(x, g.iter().flat_map(|&gv| std::iter::repeat_n(gv * scale, hw)).collect());
                }
            }
            &Op::Softmax { x, cols } => {
                if wants(x) {
                    let mut gx = vec![0.0; g.len()];
                    for ((gr, yr), out_r) in g.chunks(cols).zip(out.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gv), y) in out_r.iter_mut().zip(gr).zip(yr) {
                            *o = y * (gv - dot);
                        }
                    }
                    acc(x, gx);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if wants(*logits) {
                    let k = probs.len() / labels.len();
                    let scale = g[0] / labels.len() as f64;
                    let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (row, &label) in labels.iter().enumerate() {
                        gx[row * k + label] -= scale;
                    }
                    acc(*logits, gx);
                }
            }
            &Op::Bce { p, target, eps } => {
                if wants(p) {
                    let probs = val(p);
                    let scale = g[0] / probs.len() as f64;
                    let gx = probs
                        .iter()
                        .map(|&v| {
                            if v < eps || v > 1.0 - eps {
                                0.0
                            } else {
                                scale * (-target / v + (1.0 - target) / (1.0 - v))
                            }
                        })
                        .collect();
                    acc(p, gx);
                }
            }
        }
    }
}
