//! Recorded batched computations with reverse accumulation.
//!
//! Every node holds a `rows × cols` matrix (rows are batch samples; a scalar
//! is `1 × 1`). Forward-mode tangents are not a separate mechanism: a tangent
//! is just another chain of nodes on the same tape (the layer applied to the
//! tangent, the activation derivative times the tangent, ...), so the reverse
//! sweep differentiates through primal and tangent channels alike.

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::mlp::{Activation, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear {
        x: NodeId,
        slot: usize,
        layer: usize,
        bias: bool,
    },
    Act {
        x: NodeId,
        /// `σ'(x)`, kept from the forward pass for the reverse sweep.
        deriv: Array2<f64>,
    },
    ActDeriv {
        x: NodeId,
        act: Activation,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    RowScale {
        x: NodeId,
        scale: Array1<f64>,
    },
    MulConst {
        x: NodeId,
        c: Array2<f64>,
    },
    MatMulConst {
        x: NodeId,
        w: Array2<f64>,
    },
    Concat(Vec<NodeId>),
    StopGrad(#[allow(dead_code)] NodeId),
    MeanSqNorm(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Act { .. } => "activation",
            Op::ActDeriv { .. } => "activation-derivative",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::RowScale { .. } => "row-scale",
            Op::MulConst { .. } => "mul-const",
            Op::MatMulConst { .. } => "matmul-const",
            Op::Concat(_) => "concat",
            Op::StopGrad(_) => "stopgrad",
            Op::MeanSqNorm(_) => "mean-square-norm",
        }
    }
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

struct Slot<'a> {
    params: &'a MlpParams,
    trainable: bool,
}

/// Tape of a batched scalar-valued computation.
pub struct LossGraph<'a> {
    nodes: Vec<Node>,
    slots: Vec<Slot<'a>>,
    /// `(input, activation, node)` for every activation node.
    activations: Vec<(NodeId, Activation, NodeId)>,
}

impl Default for LossGraph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> LossGraph<'a> {
    pub fn new() -> Self {
        LossGraph {
            nodes: Vec::new(),
            slots: Vec::new(),
            activations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Slot index for a parameter set, registering it on first use.
    pub fn bind(&mut self, params: &'a MlpParams) -> usize {
        if let Some(i) = self.slots.iter().position(|s| std::ptr::eq(s.params, params)) {
            return i;
        }
        self.slots.push(Slot {
            params,
            trainable: true,
        });
        self.slots.len() - 1
    }

    /// Marks a parameter set as frozen: it still transmits gradients to its
    /// inputs, but accumulates none itself.
    pub fn freeze(&mut self, params: &'a MlpParams) {
        let i = self.bind(params);
        self.slots[i].trainable = false;
    }

    pub fn is_trainable(&self, params: &MlpParams) -> bool {
        self.slots
            .iter()
            .find(|s| std::ptr::eq(s.params, params))
            .is_some_and(|s| s.trainable)
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf | Op::StopGrad(_) => false,
            Op::Linear { x, slot, .. } => self.slots[*slot].trainable || self.needs(*x),
            Op::Act { x, .. }
            | Op::ActDeriv { x, .. }
            | Op::Scale(x, _)
            | Op::RowScale { x, .. }
            | Op::MulConst { x, .. }
            | Op::MatMulConst { x, .. }
            | Op::MeanSqNorm(x) => self.needs(*x),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => self.needs(*a) || self.needs(*b),
            Op::Concat(parts) => parts.iter().any(|p| self.needs(*p)),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-scalar node");
        v[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> NodeId {
        self.constant(Array2::zeros((rows, cols)))
    }

    /// `x Wᵀ (+ b)` with the weights of `layer` in the bound parameter set.
    pub fn linear(&mut self, x: NodeId, params: &'a MlpParams, layer: usize, bias: bool) -> NodeId {
        let slot = self.bind(params);
        let dense = &params.layers[layer];
        let mut value = self.value(x).dot(&dense.weight.t());
        if bias {
            value += &dense.bias;
        }
        self.push(
            Op::Linear {
                x,
                slot,
                layer,
                bias,
            },
            value,
        )
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> NodeId {
        let input = self.value(x);
        let mut value = Array2::zeros(input.raw_dim());
        let mut deriv = Array2::zeros(input.raw_dim());
        Zip::from(&mut value).and(&mut deriv).and(input).for_each(|y, dy, &v| {
            (*y, *dy) = act.value_and_derivative(v);
        });
        let id = self.push(Op::Act { x, deriv }, value);
        self.activations.push((x, act, id));
        id
    }

    /// Elementwise activation derivative `σ'(x)`.
    pub fn activation_derivative(&mut self, x: NodeId, act: Activation) -> NodeId {
        let cached = self
            .activations
            .iter()
            .rev()
            .find(|(input, a, _)| *input == x && *a == act)
            .map(|&(_, _, id)| id);
        let value = match cached.map(|id| &self.nodes[id.0].op) {
            Some(Op::Act { deriv, .. }) => deriv.clone(),
            _ => self.value(x).mapv(|v| act.derivative(v)),
        };
        self.push(Op::ActDeriv { x, act }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) - self.value(b);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x) * c;
        self.push(Op::Scale(x, c), value)
    }

    /// Multiplies row `i` of `x` by `scale[i]`.
    pub fn row_scale(&mut self, x: NodeId, scale: Array1<f64>) -> NodeId {
        let mut value = self.value(x).clone();
        for (mut row, &c) in value.rows_mut().into_iter().zip(scale.iter()) {
            row *= c;
        }
        self.push(Op::RowScale { x, scale }, value)
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, x: NodeId, c: Array2<f64>) -> NodeId {
        let value = self.value(x) * &c;
        self.push(Op::MulConst { x, c }, value)
    }

    /// `x Wᵀ` for a constant `W`.
    pub fn matmul_const(&mut self, x: NodeId, w: Array2<f64>) -> NodeId {
        let value = self.value(x).dot(&w.t());
        self.push(Op::MatMulConst { x, w }, value)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(Op::Concat(parts.to_vec()), value)
    }

    /// Identity on values; blocks all gradient flow into `x`.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(Op::StopGrad(x), value)
    }

    /// `(1/rows) Σᵢ ‖xᵢ‖²` as a scalar node.
    pub fn mean_square_norm(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let value = v.iter().map(|a| a * a).sum::<f64>() / v.nrows() as f64;
        self.push(Op::MeanSqNorm(x), Array2::from_elem((1, 1), value))
    }

    /// Reverse accumulation from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.scalar(root);
        if !root_value.is_finite() {
            return Err(Error::Numeric {
                context: format!("loss value {root_value} at node {}", root.0),
                layer: None,
                step: None,
            });
        }
        let mut param_grads: Vec<Option<MlpParams>> = self
            .slots
            .iter()
            .map(|s| s.trainable.then(|| s.params.zeros_like()))
            .collect();
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            match &node.op {
                Op::Leaf | Op::StopGrad(_) => {}
                Op::Linear {
                    x,
                    slot,
                    layer,
                    bias,
                } => {
                    let params = self.slots[*slot].params;
                    let dense = &params.layers[*layer];
                    if let Some(pg) = param_grads[*slot].as_mut() {
                        let dl = &mut pg.layers[*layer];
                        ndarray::linalg::general_mat_mul(
                            1.0,
                            &g.t(),
                            self.value(*x),
                            1.0,
                            &mut dl.weight,
                        );
                        if *bias {
                            dl.bias += &g.sum_axis(Axis(0));
                        }
                        if !dl.weight.iter().all(|v| v.is_finite()) {
                            return Err(self.grad_error(idx));
                        }
                    }
                    if self.needs(*x) {
                        accumulate(&mut adj, *x, g.dot(&dense.weight));
                    }
                }
                Op::Act { x, deriv } => {
                    let mut d = g;
                    d *= deriv;
                    accumulate(&mut adj, *x, d);
                }
                Op::ActDeriv { x, act } => {
                    let act = *act;
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*x))
                        .for_each(|a, &v| *a *= act.second_derivative(v));
                    accumulate(&mut adj, *x, d);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, -g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(x, c) => accumulate(&mut adj, *x, g * *c),
                Op::RowScale { x, scale } => {
                    let mut d = g;
                    for (mut row, &c) in d.rows_mut().into_iter().zip(scale.iter()) {
                        row *= c;
                    }
                    accumulate(&mut adj, *x, d);
                }
                Op::MulConst { x, c } => accumulate(&mut adj, *x, g * c),
                Op::MatMulConst { x, w } => accumulate(&mut adj, *x, g.dot(w)),
                Op::Concat(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let width = self.value(*p).ncols();
                        if self.needs(*p) {
                            accumulate(&mut adj, *p, g.slice(s![.., col..col + width]).to_owned());
                        }
                        col += width;
                    }
                }
                Op::MeanSqNorm(x) => {
                    let v = self.value(*x);
                    let c = 2.0 * g[[0, 0]] / v.nrows() as f64;
                    accumulate(&mut adj, *x, v * c);
                }
            }
        }

        for (slot, pg) in param_grads.iter().enumerate() {
            if let Some(pg) = pg {
                if !pg.all_finite() {
                    return Err(Error::Numeric {
                        context: format!("gradient of parameter slot {slot}"),
                        layer: None,
                        step: None,
                    });
                }
            }
        }
        Ok(Gradients {
            slots: self
                .slots
                .iter()
                .zip(param_grads)
                .map(|(s, g)| (s.params as *const MlpParams, g))
                .collect(),
        })
    }

    fn grad_error(&self, idx: usize) -> Error {
        Error::Numeric {
            context: format!(
                "gradient at node {idx} ({})",
                self.nodes[idx].op.name()
            ),
            layer: None,
            step: None,
        }
    }

    /// Gradient of the scalar `root` with respect to `params`.
    ///
    /// Parameters that are frozen, unbound, or unreachable from `root` get an
    /// all-zero gradient.
    pub fn param_grad(&self, root: NodeId, params: &MlpParams) -> Result<MlpParams> {
        Ok(self.backward(root)?.get(params))
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
    match &mut adj[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Parameter gradients produced by one reverse sweep.
pub struct Gradients {
    slots: Vec<(*const MlpParams, Option<MlpParams>)>,
}

impl Gradients {
    pub fn get(&self, params: &MlpParams) -> MlpParams {
        self.slots
            .iter()
            .find(|(p, _)| std::ptr::eq(*p, params))
            .and_then(|(_, g)| g.clone())
            .unwrap_or_else(|| params.zeros_like())
    }
}
