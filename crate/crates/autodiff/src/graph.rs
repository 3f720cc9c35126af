//! Define-by-run computation graph.
//!
//! Every operation appends a node whose value is computed immediately, so a
//! graph doubles as an execution trace. Reverse-mode differentiation
//! ([`Graph::gradient`]) walks the trace backwards and emits adjoint
//! expressions *as new graph nodes* built from the same primitive ops.
//! Because adjoints are ordinary nodes, differentiating a gradient again is
//! the same machinery applied twice, which is what the condensation loss
//! needs (a distance between gradients, differentiated with respect to the
//! images that produced them).

use std::sync::Arc;

use crate::error::{AdError, Result};
use crate::kernels as k;
use crate::real::Real;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Handle to a node. Valid only for the graph that created it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Primitive operations. Attribute scalars are stored as `f64` and converted
/// to the graph element type at evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Op {
    /// Trainable input; the only node kind that `rebind` accepts.
    Leaf,
    /// Fixed data; skipped by `replay`, never differentiated through.
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Powf(NodeId, f64),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    ClampMin(NodeId, f64),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    /// `x > thresh ? if_gt : if_le`, elementwise. Not differentiable; used
    /// for the piecewise-constant factors in rectifier and clamp adjoints so
    /// that replay recomputes them from fresh leaf values.
    SelectGt { x: NodeId, thresh: f64, if_gt: f64, if_le: f64 },
    Reshape(NodeId),
    Broadcast(NodeId),
    Transpose(NodeId),
    /// Swap the first two axes, keeping the trailing block contiguous.
    Swap01(NodeId),
    FlipW(NodeId),
    FlipHW(NodeId),
    Translate { x: NodeId, dy: i64, dx: i64 },
    /// Sum over the padded rank-4 axes in `mask`; output shape lives on the
    /// node (keepdim is a reshape decided at build time).
    SumAxes { x: NodeId, mask: u8 },
    MatMul(NodeId, NodeId),
    Conv2d { x: NodeId, w: NodeId, stride: u32, pad: u32 },
    Dilate { x: NodeId, stride: u32 },
    Undilate { x: NodeId, stride: u32 },
    AvgPool { x: NodeId, k: u32, stride: u32 },
    AvgUnpool { x: NodeId, k: u32, stride: u32 },
    MaxPool { x: NodeId, k: u32, stride: u32 },
    /// Scatter `g` to the argmax positions recorded on `src` (a `MaxPool`
    /// node), producing a plane of the pool input's extent.
    PoolScatter { g: NodeId, src: NodeId },
    /// Gather plane values at the argmax positions recorded on `src`.
    PoolGather { x: NodeId, src: NodeId },
    /// Bilinear sampling at constant source coordinates; differentiable with
    /// respect to `x` only (the builder rejects trainable grids).
    GridSample { x: NodeId, grid: NodeId },
    GridScatter { g: NodeId, grid: NodeId },
}

pub(crate) struct Node<T> {
    pub op: Op,
    pub shape: Shape,
    pub requires_grad: bool,
    pub value: Tensor<T>,
    /// Argmax positions for `MaxPool` nodes, flat within each plane.
    pub indices: Option<Arc<Vec<u32>>>,
}

/// Gradient of the root with respect to one requested leaf.
#[derive(Clone, Copy, Debug)]
pub struct LeafGrad {
    pub wrt: NodeId,
    /// Node holding the gradient value (same shape as the leaf).
    pub grad: NodeId,
    /// True when the root did not depend on this leaf; the gradient node is
    /// then an all-zero constant.
    pub detached: bool,
}

pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.index()].shape
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.index()].value
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.index()].op, Op::Leaf)
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.index()].requires_grad
    }

    /// Trainable input node.
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push_raw(Op::Leaf, value.shape(), true, value, None)
    }

    /// Fixed data node. Gradients never flow into it and `replay` keeps its
    /// value as-is.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_raw(Op::Const, value.shape(), false, value, None)
    }

    pub fn scalar_const(&mut self, v: T) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub(crate) fn check(&self, id: NodeId) -> Result<()> {
        if id.index() >= self.nodes.len() {
            return Err(AdError::UnknownNode(id));
        }
        Ok(())
    }

    pub(crate) fn push_raw(
        &mut self,
        op: Op,
        shape: Shape,
        requires_grad: bool,
        value: Tensor<T>,
        indices: Option<Arc<Vec<u32>>>,
    ) -> NodeId {
        debug_assert_eq!(value.shape(), shape);
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, shape, requires_grad, value, indices });
        id
    }

    /// Validated ops funnel through here: infers `requires_grad` from the
    /// differentiable inputs, evaluates, and appends.
    pub(crate) fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        let requires_grad = self
            .differentiable_inputs(&op)
            .iter()
            .any(|i| self.nodes[i.index()].requires_grad);
        let (value, indices) = self.compute(&op, shape);
        self.push_raw(op, shape, requires_grad, value, indices)
    }

    /// Inputs through which gradients can flow (excludes index carriers and
    /// constant grids).
    fn differentiable_inputs(&self, op: &Op) -> Vec<NodeId> {
        use Op::*;
        match *op {
            Leaf | Const => vec![],
            SelectGt { .. } => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![a, b],
            Neg(x) | Exp(x) | Log(x) | Powf(x, _) | Scale(x, _) | AddScalar(x, _)
            | ClampMin(x, _) | Relu(x) | LeakyRelu(x, _) | Sigmoid(x) | Reshape(x)
            | Broadcast(x) | Transpose(x) | Swap01(x) | FlipW(x) | FlipHW(x)
            | Translate { x, .. } | SumAxes { x, .. } | Dilate { x, .. }
            | Undilate { x, .. } | AvgPool { x, .. } | AvgUnpool { x, .. }
            | MaxPool { x, .. } => vec![x],
            Conv2d { x, w, .. } => vec![x, w],
            PoolScatter { g, .. } | GridScatter { g, .. } => vec![g],
            PoolGather { x, .. } | GridSample { x, .. } => vec![x],
        }
    }

    fn val(&self, id: NodeId) -> &[T] {
        self.nodes[id.index()].value.data()
    }

    fn dims(&self, id: NodeId) -> [usize; 4] {
        self.nodes[id.index()].shape.padded()
    }

    fn compute(&self, op: &Op, shape: Shape) -> (Tensor<T>, Option<Arc<Vec<u32>>>) {
        use Op::*;
        let t = |v: Vec<T>| Tensor::from_vec(shape, v);
        let c = |v: f64| T::from_f64(v);
        let value = match *op {
            Leaf | Const => unreachable!("leaves are pushed with explicit values"),
            Add(a, b) => t(self.val(a).iter().zip(self.val(b)).map(|(x, y)| *x + *y).collect()),
            Sub(a, b) => t(self.val(a).iter().zip(self.val(b)).map(|(x, y)| *x - *y).collect()),
            Mul(a, b) => t(self.val(a).iter().zip(self.val(b)).map(|(x, y)| *x * *y).collect()),
            Div(a, b) => t(self.val(a).iter().zip(self.val(b)).map(|(x, y)| *x / *y).collect()),
            Neg(x) => t(self.val(x).iter().map(|v| -*v).collect()),
            Exp(x) => t(self.val(x).iter().map(|v| v.exp()).collect()),
            Log(x) => t(self.val(x).iter().map(|v| v.ln()).collect()),
            Powf(x, p) => {
                let p = c(p);
                t(self.val(x).iter().map(|v| v.powf(p)).collect())
            }
            Scale(x, s) => {
                let s = c(s);
                t(self.val(x).iter().map(|v| *v * s).collect())
            }
            AddScalar(x, s) => {
                let s = c(s);
                t(self.val(x).iter().map(|v| *v + s).collect())
            }
            ClampMin(x, lo) => {
                let lo = c(lo);
                t(self.val(x).iter().map(|v| if *v < lo { lo } else { *v }).collect())
            }
            Relu(x) => t(self.val(x).iter().map(|v| if *v > T::zero() { *v } else { T::zero() }).collect()),
            LeakyRelu(x, a) => {
                let a = c(a);
                t(self.val(x).iter().map(|v| if *v > T::zero() { *v } else { *v * a }).collect())
            }
            Sigmoid(x) => t(self
                .val(x)
                .iter()
                .map(|v| T::one() / (T::one() + (-*v).exp()))
                .collect()),
            SelectGt { x, thresh, if_gt, if_le } => {
                let (th, hi, lo) = (c(thresh), c(if_gt), c(if_le));
                t(self.val(x).iter().map(|v| if *v > th { hi } else { lo }).collect())
            }
            Reshape(x) => self.nodes[x.index()].value.reshaped(shape),
            Broadcast(x) => t(k::broadcast_to(self.val(x), self.dims(x), shape.padded())),
            Transpose(x) => {
                let [m, n, _, _] = self.dims(x);
                t(k::transpose2(self.val(x), m, n))
            }
            Swap01(x) => {
                let [a, b, h, w] = self.dims(x);
                t(k::swap01(self.val(x), a, b, h * w))
            }
            FlipW(x) => {
                let d = self.nodes[x.index()].shape;
                let w = d.dims()[d.ndim() - 1];
                t(k::flip_w(self.val(x), w))
            }
            FlipHW(x) => {
                let d = self.nodes[x.index()].shape;
                let (h, w) = (d.dims()[d.ndim() - 2], d.dims()[d.ndim() - 1]);
                t(k::flip_hw(self.val(x), h, w))
            }
            Translate { x, dy, dx } => {
                let [n, ch, h, w] = self.dims(x);
                t(k::translate2(self.val(x), n * ch, h, w, dy, dx))
            }
            SumAxes { x, mask } => t(k::reduce_sum(self.val(x), self.dims(x), mask)),
            MatMul(a, b) => {
                let [m, kk, _, _] = self.dims(a);
                let [_, n, _, _] = self.dims(b);
                t(k::matmul(self.val(a), m, kk, self.val(b), n))
            }
            Conv2d { x, w, stride, pad } => {
                let [n, ci, h, ww] = self.dims(x);
                let [co, _, kh, kw] = self.dims(w);
                let [_, _, ho, wo] = shape.padded();
                t(k::conv2d(
                    self.val(x),
                    n,
                    ci,
                    h,
                    ww,
                    self.val(w),
                    co,
                    kh,
                    kw,
                    stride as usize,
                    pad as usize,
                    ho,
                    wo,
                ))
            }
            Dilate { x, stride } => {
                let [n, ch, h, w] = self.dims(x);
                t(k::dilate2(self.val(x), n * ch, h, w, stride as usize))
            }
            Undilate { x, stride } => {
                let [n, ch, h, w] = self.dims(x);
                t(k::undilate2(self.val(x), n * ch, h, w, stride as usize))
            }
            AvgPool { x, k: kk, stride } => {
                let [n, ch, h, w] = self.dims(x);
                let [_, _, ho, wo] = shape.padded();
                t(k::avg_pool(self.val(x), n * ch, h, w, kk as usize, stride as usize, ho, wo))
            }
            AvgUnpool { x, k: kk, stride } => {
                let [n, ch, ho, wo] = self.dims(x);
                let [_, _, h, w] = shape.padded();
                t(k::avg_unpool(self.val(x), n * ch, ho, wo, kk as usize, stride as usize, h, w))
            }
            MaxPool { x, k: kk, stride } => {
                let [n, ch, h, w] = self.dims(x);
                let [_, _, ho, wo] = shape.padded();
                let (v, idx) =
                    k::max_pool(self.val(x), n * ch, h, w, kk as usize, stride as usize, ho, wo);
                return (t(v), Some(Arc::new(idx)));
            }
            PoolScatter { g, src } => {
                let [n, ch, ho, wo] = self.dims(g);
                let [_, _, h, w] = shape.padded();
                let idx = self.nodes[src.index()]
                    .indices
                    .as_ref()
                    .expect("PoolScatter source must carry indices");
                t(k::pool_scatter(self.val(g), idx, n * ch, ho * wo, h, w))
            }
            PoolGather { x, src } => {
                let [n, ch, h, w] = self.dims(x);
                let [_, _, ho, wo] = shape.padded();
                let idx = self.nodes[src.index()]
                    .indices
                    .as_ref()
                    .expect("PoolGather source must carry indices");
                t(k::pool_gather(self.val(x), idx, n * ch, ho * wo, h, w))
            }
            GridSample { x, grid } => {
                let [n, ch, h, w] = self.dims(x);
                let [_, ho, wo, _] = self.dims(grid);
                t(k::grid_sample(self.val(x), n, ch, h, w, self.val(grid), ho, wo))
            }
            GridScatter { g, grid } => {
                let [n, ch, ho, wo] = self.dims(g);
                let [_, _, h, w] = shape.padded();
                t(k::grid_scatter(self.val(g), n, ch, ho, wo, self.val(grid), h, w))
            }
        };
        (value, None)
    }

    /// Replaces the value of a leaf, keeping shape and identity.
    pub fn rebind(&mut self, id: NodeId, value: Tensor<T>) -> Result<()> {
        self.check(id)?;
        if !matches!(self.nodes[id.index()].op, Op::Leaf) {
            return Err(AdError::NotALeaf(id));
        }
        let expect = self.nodes[id.index()].shape;
        if value.shape() != expect {
            return Err(AdError::RebindShape { id, expect, got: value.shape() });
        }
        self.nodes[id.index()].value = value;
        Ok(())
    }

    /// Recomputes every derived node in construction order from the current
    /// leaf values. Constants keep their stored values. Running this twice
    /// on the same leaf values produces bit-identical results.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            match self.nodes[i].op {
                Op::Leaf | Op::Const => continue,
                op => {
                    let shape = self.nodes[i].shape;
                    let (value, indices) = self.compute(&op, shape);
                    self.nodes[i].value = value;
                    self.nodes[i].indices = indices;
                }
            }
        }
        Ok(())
    }

    /// Rebinds the given leaves, replays the graph, and returns the root's
    /// fresh value.
    pub fn forward(&mut self, root: NodeId, bindings: &[(NodeId, Tensor<T>)]) -> Result<Tensor<T>> {
        self.check(root)?;
        for (id, v) in bindings {
            self.rebind(*id, v.clone())?;
        }
        self.replay()?;
        Ok(self.value(root).clone())
    }
}
