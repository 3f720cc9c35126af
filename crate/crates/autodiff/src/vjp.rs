//! Reverse-mode sweep.
//!
//! [`Graph::gradient`] seeds the root's adjoint with 1 and walks nodes in
//! reverse construction order (a valid reverse topological order, since
//! every node's inputs precede it). Each visited node contributes
//! vector-Jacobian products to its inputs, and every contribution is built
//! out of primitive ops, so the returned gradient nodes are themselves
//! differentiable. Piecewise-constant factors (rectifier masks, clamp
//! masks, pool argmaxes) enter as non-differentiable nodes, which makes
//! second derivatives exact almost everywhere.

use crate::error::{AdError, Result};
use crate::graph::{Graph, LeafGrad, NodeId, Op};
use crate::real::Real;
use crate::tensor::Tensor;

impl<T: Real> Graph<T> {
    /// Gradient of a scalar `root` with respect to each leaf in `wrt`.
    ///
    /// Returns one entry per requested leaf, in order. Leaves the root does
    /// not depend on get a zero constant flagged `detached`. The adjoint
    /// expressions are appended to the graph, so calling this again on one
    /// of the returned gradient nodes differentiates twice.
    pub fn gradient(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<LeafGrad>> {
        self.check(root)?;
        if !self.shape(root).is_scalar() {
            return Err(AdError::NonScalarRoot(self.shape(root)));
        }
        for &w in wrt {
            self.check(w)?;
            if !self.is_leaf(w) {
                return Err(AdError::NotALeaf(w));
            }
        }

        let n0 = self.len();
        let mut adj: Vec<Option<NodeId>> = vec![None; n0];
        if self.requires_grad(root) {
            adj[root.index()] = Some(self.constant(Tensor::scalar(T::one())));
        }

        for i in (0..n0).rev() {
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op;
            if matches!(op, Op::Leaf | Op::Const) {
                continue;
            }
            let pairs = self.vjp_pairs(NodeId(i as u32), op, g)?;
            for (input, contrib) in pairs {
                debug_assert!(input.index() < i);
                let slot = &mut adj[input.index()];
                *slot = Some(match *slot {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match adj[w.index()] {
                Some(g) => out.push(LeafGrad { wrt: w, grad: g, detached: false }),
                None => {
                    let zero = self.constant(Tensor::zeros(self.shape(w)));
                    out.push(LeafGrad { wrt: w, grad: zero, detached: true });
                }
            }
        }
        Ok(out)
    }

    /// Convenience for the common single-leaf case.
    pub fn gradient_one(&mut self, root: NodeId, wrt: NodeId) -> Result<LeafGrad> {
        Ok(self.gradient(root, &[wrt])?.remove(0))
    }

    /// Adjoint contributions of node `id` (with op `op` and output adjoint
    /// `g`) to each differentiable input that requires gradients.
    fn vjp_pairs(&mut self, id: NodeId, op: Op, g: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        use Op::*;
        let mut out = Vec::with_capacity(2);
        let needs = |s: &Self, n: NodeId| s.requires_grad(n);
        match op {
            Leaf | Const | SelectGt { .. } => {}
            Add(a, b) => {
                if needs(self, a) {
                    out.push((a, g));
                }
                if needs(self, b) {
                    out.push((b, g));
                }
            }
            Sub(a, b) => {
                if needs(self, a) {
                    out.push((a, g));
                }
                if needs(self, b) {
                    let ng = self.neg(g)?;
                    out.push((b, ng));
                }
            }
            Mul(a, b) => {
                if needs(self, a) {
                    let ga = self.mul(g, b)?;
                    out.push((a, ga));
                }
                if needs(self, b) {
                    let gb = self.mul(g, a)?;
                    out.push((b, gb));
                }
            }
            Div(a, b) => {
                if needs(self, a) {
                    let ga = self.div(g, b)?;
                    out.push((a, ga));
                }
                if needs(self, b) {
                    // d(a/b)/db = -a/b^2 = -out/b
                    let go = self.mul(g, id)?;
                    let gob = self.div(go, b)?;
                    let gb = self.neg(gob)?;
                    out.push((b, gb));
                }
            }
            Neg(x) => {
                if needs(self, x) {
                    let gx = self.neg(g)?;
                    out.push((x, gx));
                }
            }
            Exp(x) => {
                if needs(self, x) {
                    let gx = self.mul(g, id)?;
                    out.push((x, gx));
                }
            }
            Log(x) => {
                if needs(self, x) {
                    let gx = self.div(g, x)?;
                    out.push((x, gx));
                }
            }
            Powf(x, p) => {
                if needs(self, x) {
                    let xp = self.powf(x, p - 1.0)?;
                    let gxp = self.mul(g, xp)?;
                    let gx = self.scale(gxp, p)?;
                    out.push((x, gx));
                }
            }
            Scale(x, c) => {
                if needs(self, x) {
                    let gx = self.scale(g, c)?;
                    out.push((x, gx));
                }
            }
            AddScalar(x, _) => {
                if needs(self, x) {
                    out.push((x, g));
                }
            }
            ClampMin(x, lo) => {
                if needs(self, x) {
                    let mask = self.select_gt(x, lo, 1.0, 0.0)?;
                    let gx = self.mul(g, mask)?;
                    out.push((x, gx));
                }
            }
            Relu(x) => {
                if needs(self, x) {
                    let mask = self.select_gt(x, 0.0, 1.0, 0.0)?;
                    let gx = self.mul(g, mask)?;
                    out.push((x, gx));
                }
            }
            LeakyRelu(x, a) => {
                if needs(self, x) {
                    let mask = self.select_gt(x, 0.0, 1.0, a)?;
                    let gx = self.mul(g, mask)?;
                    out.push((x, gx));
                }
            }
            Sigmoid(x) => {
                if needs(self, x) {
                    // s'(x) = s * (1 - s), reusing the output node.
                    let ns = self.neg(id)?;
                    let om = self.add_scalar(ns, 1.0)?;
                    let ss = self.mul(id, om)?;
                    let gx = self.mul(g, ss)?;
                    out.push((x, gx));
                }
            }
            Reshape(x) => {
                if needs(self, x) {
                    let gx = self.reshape(g, self.shape(x))?;
                    out.push((x, gx));
                }
            }
            Broadcast(x) => {
                if needs(self, x) {
                    let sx = self.shape(x).padded();
                    let sg = self.shape(g).padded();
                    let mut axes = Vec::new();
                    for i in 0..4 {
                        if sx[i] == 1 && sg[i] != 1 {
                            axes.push(i);
                        }
                    }
                    let summed = self.sum_axes(g, &axes, true)?;
                    let gx = self.reshape(summed, self.shape(x))?;
                    out.push((x, gx));
                }
            }
            Transpose(x) => {
                if needs(self, x) {
                    let gx = self.transpose(g)?;
                    out.push((x, gx));
                }
            }
            Swap01(x) => {
                if needs(self, x) {
                    let gx = self.swap01(g)?;
                    out.push((x, gx));
                }
            }
            FlipW(x) => {
                if needs(self, x) {
                    let gx = self.flip_w(g)?;
                    out.push((x, gx));
                }
            }
            FlipHW(x) => {
                if needs(self, x) {
                    let gx = self.flip_hw(g)?;
                    out.push((x, gx));
                }
            }
            Translate { x, dy, dx } => {
                if needs(self, x) {
                    let gx = self.translate(g, -dy, -dx)?;
                    out.push((x, gx));
                }
            }
            SumAxes { x, mask } => {
                if needs(self, x) {
                    let sx = self.shape(x);
                    let mut kd = Vec::with_capacity(sx.ndim());
                    for i in 0..sx.ndim() {
                        kd.push(if mask & (1 << i) != 0 { 1 } else { sx.dim(i) });
                    }
                    let kd = crate::shape::Shape::from_dims(&kd).unwrap();
                    let gr = self.reshape(g, kd)?;
                    let gx = self.broadcast(gr, sx)?;
                    out.push((x, gx));
                }
            }
            MatMul(a, b) => {
                if needs(self, a) {
                    let bt = self.transpose(b)?;
                    let ga = self.matmul(g, bt)?;
                    out.push((a, ga));
                }
                if needs(self, b) {
                    let at = self.transpose(a)?;
                    let gb = self.matmul(at, g)?;
                    out.push((b, gb));
                }
            }
            Conv2d { x, w, stride, pad } => {
                let (stride, pad) = (stride as usize, pad as usize);
                let kh = self.shape(w).dim(2);
                let need_x = needs(self, x);
                let need_w = needs(self, w);
                if need_x || need_w {
                    let gd = if stride > 1 { self.dilate(g, stride)? } else { g };
                    if need_x {
                        // Full correlation with the spatially rotated,
                        // channel-swapped kernel recovers the input gradient.
                        let wr = self.flip_hw(w)?;
                        let ws = self.swap01(wr)?;
                        let gx = self.conv2d(gd, ws, 1, kh - 1 - pad)?;
                        out.push((x, gx));
                    }
                    if need_w {
                        // Correlating input with output gradient, with batch
                        // and channel axes swapped, yields the kernel gradient.
                        let xs = self.swap01(x)?;
                        let gs = self.swap01(gd)?;
                        let gw0 = self.conv2d(xs, gs, 1, pad)?;
                        let gw = self.swap01(gw0)?;
                        out.push((w, gw));
                    }
                }
            }
            Dilate { x, stride } => {
                if needs(self, x) {
                    let gx = self.undilate(g, stride as usize)?;
                    out.push((x, gx));
                }
            }
            Undilate { x, stride } => {
                if needs(self, x) {
                    let gx = self.dilate(g, stride as usize)?;
                    out.push((x, gx));
                }
            }
            AvgPool { x, k, stride } => {
                if needs(self, x) {
                    let sx = self.shape(x);
                    let gx = self.avg_unpool(g, k as usize, stride as usize, sx.dim(2), sx.dim(3))?;
                    out.push((x, gx));
                }
            }
            AvgUnpool { x, k, stride } => {
                if needs(self, x) {
                    let gx = self.avg_pool(g, k as usize, stride as usize)?;
                    out.push((x, gx));
                }
            }
            MaxPool { x, .. } => {
                if needs(self, x) {
                    let gx = self.pool_scatter(g, id)?;
                    out.push((x, gx));
                }
            }
            PoolScatter { g: gin, src } => {
                if needs(self, gin) {
                    let gx = self.pool_gather(g, src)?;
                    out.push((gin, gx));
                }
            }
            PoolGather { x, src } => {
                if needs(self, x) {
                    let gx = self.pool_scatter(g, src)?;
                    out.push((x, gx));
                }
            }
            GridSample { x, grid } => {
                if needs(self, x) {
                    let sx = self.shape(x);
                    let gx = self.grid_scatter(g, grid, sx.dim(2), sx.dim(3))?;
                    out.push((x, gx));
                }
            }
            GridScatter { g: gin, grid } => {
                if needs(self, gin) {
                    let gx = self.grid_sample(g, grid)?;
                    out.push((gin, gx));
                }
            }
        }
        Ok(out)
    }
}
