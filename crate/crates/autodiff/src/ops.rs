//! Public operation builders: shape validation happens here, evaluation in
//! [`Graph::push`]. Elementwise binary ops demand exactly equal shapes;
//! broadcasting is always explicit through [`Graph::broadcast`].

use crate::error::{AdError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::real::Real;
use crate::shape::Shape;

impl<T: Real> Graph<T> {
    fn binary(&mut self, name: &'static str, a: NodeId, b: NodeId, op: Op) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AdError::shape(name, format!("operand shapes {sa} and {sb} differ")));
        }
        Ok(self.push(op, sa))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("div", a, b, Op::Div(a, b))
    }

    fn unary(&mut self, x: NodeId, op: Op) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        Ok(self.push(op, s))
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Neg(x))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Exp(x))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Log(x))
    }

    pub fn powf(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        self.unary(x, Op::Powf(x, p))
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.powf(x, 0.5)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(x, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary(x, Op::AddScalar(x, c))
    }

    pub fn clamp_min(&mut self, x: NodeId, lo: f64) -> Result<NodeId> {
        self.unary(x, Op::ClampMin(x, lo))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> Result<NodeId> {
        self.unary(x, Op::LeakyRelu(x, alpha))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sigmoid(x))
    }

    /// Elementwise `x > thresh ? if_gt : if_le`. Output never requires
    /// gradients; see [`Op::SelectGt`].
    pub fn select_gt(&mut self, x: NodeId, thresh: f64, if_gt: f64, if_le: f64) -> Result<NodeId> {
        self.unary(x, Op::SelectGt { x, thresh, if_gt, if_le })
    }

    pub fn reshape(&mut self, x: NodeId, shape: Shape) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.numel() != shape.numel() {
            return Err(AdError::shape(
                "reshape",
                format!("cannot view {s} ({} elems) as {shape} ({} elems)", s.numel(), shape.numel()),
            ));
        }
        Ok(self.push(Op::Reshape(x), shape))
    }

    /// Expands extent-1 axes up to `shape`. Requires equal rank; reshape
    /// first when lifting rank.
    pub fn broadcast(&mut self, x: NodeId, shape: Shape) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() != shape.ndim() {
            return Err(AdError::shape(
                "broadcast",
                format!("rank mismatch: {s} vs {shape} (reshape to equal rank first)"),
            ));
        }
        for (a, b) in s.padded().iter().zip(shape.padded().iter()) {
            if *a != *b && *a != 1 {
                return Err(AdError::shape("broadcast", format!("cannot expand {s} to {shape}")));
            }
        }
        Ok(self.push(Op::Broadcast(x), shape))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() != 2 {
            return Err(AdError::shape("transpose", format!("expected rank 2, got {s}")));
        }
        Ok(self.push(Op::Transpose(x), Shape::d2(s.dim(1), s.dim(0))))
    }

    /// Swaps the first two axes of a rank >= 2 tensor.
    pub fn swap01(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() < 2 {
            return Err(AdError::shape("swap01", format!("expected rank >= 2, got {s}")));
        }
        let mut d = s.dims().to_vec();
        d.swap(0, 1);
        Ok(self.push(Op::Swap01(x), Shape::from_dims(&d).unwrap()))
    }

    /// Mirrors the last axis.
    pub fn flip_w(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() < 1 {
            return Err(AdError::shape("flip_w", "expected rank >= 1, got scalar".to_string()));
        }
        Ok(self.push(Op::FlipW(x), s))
    }

    /// Mirrors the last two axes (180 degree rotation of each plane).
    pub fn flip_hw(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() < 2 {
            return Err(AdError::shape("flip_hw", format!("expected rank >= 2, got {s}")));
        }
        Ok(self.push(Op::FlipHW(x), s))
    }

    /// Integer shift of each `(h, w)` plane with zero fill:
    /// `out[y][x] = in[y + dy][x + dx]`.
    pub fn translate(&mut self, x: NodeId, dy: i64, dx: i64) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() != 4 {
            return Err(AdError::shape("translate", format!("expected rank 4, got {s}")));
        }
        Ok(self.push(Op::Translate { x, dy, dx }, s))
    }

    /// Sums over the given logical axes. With `keepdim` the reduced axes
    /// stay at extent 1, otherwise they are removed from the shape.
    pub fn sum_axes(&mut self, x: NodeId, axes: &[usize], keepdim: bool) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        let mut mask = 0u8;
        for &a in axes {
            if a >= s.ndim() {
                return Err(AdError::invalid(
                    "sum_axes",
                    format!("axis {a} out of range for {s}"),
                ));
            }
            mask |= 1 << a;
        }
        let mut dims = Vec::with_capacity(s.ndim());
        for i in 0..s.ndim() {
            if mask & (1 << i) != 0 {
                if keepdim {
                    dims.push(1);
                }
            } else {
                dims.push(s.dim(i));
            }
        }
        let shape = Shape::from_dims(&dims).unwrap();
        Ok(self.push(Op::SumAxes { x, mask }, shape))
    }

    /// Sums every element down to a scalar.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        let axes: Vec<usize> = (0..s.ndim()).collect();
        self.sum_axes(x, &axes, false)
    }

    /// Mean of every element.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.shape(x).numel();
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.ndim() != 2 || sb.ndim() != 2 || sa.dim(1) != sb.dim(0) {
            return Err(AdError::shape("matmul", format!("incompatible shapes {sa} x {sb}")));
        }
        Ok(self.push(Op::MatMul(a, b), Shape::d2(sa.dim(0), sb.dim(1))))
    }

    /// Cross-correlation of `x: (n, ci, h, w)` with `w: (co, ci, kh, kw)`.
    /// The padded extent must split exactly: `(h + 2*pad - kh) % stride == 0`
    /// (same for width), and `pad <= k - 1` so the input-gradient expression
    /// stays well formed.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.ndim() != 4 || sw.ndim() != 4 {
            return Err(AdError::shape("conv2d", format!("expected rank 4, got {sx} and {sw}")));
        }
        if sx.dim(1) != sw.dim(1) {
            return Err(AdError::shape(
                "conv2d",
                format!("input channels {} != kernel channels {}", sx.dim(1), sw.dim(1)),
            ));
        }
        if stride == 0 {
            return Err(AdError::invalid("conv2d", "stride must be >= 1"));
        }
        let (h, ww) = (sx.dim(2), sx.dim(3));
        let (kh, kw) = (sw.dim(2), sw.dim(3));
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > ww + 2 * pad {
            return Err(AdError::shape(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit input {h}x{ww} with pad {pad}"),
            ));
        }
        if pad + 1 > kh || pad + 1 > kw {
            return Err(AdError::invalid(
                "conv2d",
                format!("pad {pad} exceeds kernel - 1 ({kh}x{kw})"),
            ));
        }
        if (h + 2 * pad - kh) % stride != 0 || (ww + 2 * pad - kw) % stride != 0 {
            return Err(AdError::invalid(
                "conv2d",
                format!(
                    "stride {stride} does not divide padded extent ({h}+2*{pad}-{kh}, {ww}+2*{pad}-{kw})"
                ),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (ww + 2 * pad - kw) / stride + 1;
        let shape = Shape::d4(sx.dim(0), sw.dim(0), ho, wo);
        Ok(self.push(Op::Conv2d { x, w, stride: stride as u32, pad: pad as u32 }, shape))
    }

    /// Inserts `stride - 1` zeros between spatial neighbours.
    pub fn dilate(&mut self, x: NodeId, stride: usize) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() != 4 || stride == 0 {
            return Err(AdError::invalid("dilate", format!("rank-4 input and stride >= 1 required, got {s}")));
        }
        let shape = Shape::d4(
            s.dim(0),
            s.dim(1),
            (s.dim(2) - 1) * stride + 1,
            (s.dim(3) - 1) * stride + 1,
        );
        Ok(self.push(Op::Dilate { x, stride: stride as u32 }, shape))
    }

    /// Keeps every `stride`-th spatial sample (adjoint of [`Graph::dilate`]).
    pub fn undilate(&mut self, x: NodeId, stride: usize) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() != 4 || stride == 0 {
            return Err(AdError::invalid("undilate", format!("rank-4 input and stride >= 1 required, got {s}")));
        }
        let (hd, wd) = (s.dim(2), s.dim(3));
        if (hd - 1) % stride != 0 || (wd - 1) % stride != 0 {
            return Err(AdError::invalid(
                "undilate",
                format!("extent {hd}x{wd} is not a dilation by {stride}"),
            ));
        }
        let shape = Shape::d4(s.dim(0), s.dim(1), (hd - 1) / stride + 1, (wd - 1) / stride + 1);
        Ok(self.push(Op::Undilate { x, stride: stride as u32 }, shape))
    }

    fn pool_checked(&mut self, name: &'static str, x: NodeId, k: usize, stride: usize) -> Result<Shape> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() != 4 {
            return Err(AdError::shape(name, format!("expected rank 4, got {s}")));
        }
        if k == 0 || stride == 0 || s.dim(2) < k || s.dim(3) < k {
            return Err(AdError::invalid(
                name,
                format!("window {k} / stride {stride} invalid for input {s}"),
            ));
        }
        let ho = (s.dim(2) - k) / stride + 1;
        let wo = (s.dim(3) - k) / stride + 1;
        Ok(Shape::d4(s.dim(0), s.dim(1), ho, wo))
    }

    /// Mean pooling over `k x k` windows; ragged edges past the last full
    /// window are dropped (floor semantics).
    pub fn avg_pool(&mut self, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let shape = self.pool_checked("avg_pool", x, k, stride)?;
        Ok(self.push(Op::AvgPool { x, k: k as u32, stride: stride as u32 }, shape))
    }

    /// Adjoint of [`Graph::avg_pool`]: spreads pooled values back over their
    /// windows into a plane of extent `(h, w)`.
    pub fn avg_unpool(&mut self, x: NodeId, k: usize, stride: usize, h: usize, w: usize) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x);
        if s.ndim() != 4 || k == 0 || stride == 0 {
            return Err(AdError::invalid("avg_unpool", format!("rank-4 input required, got {s}")));
        }
        let (ho, wo) = (s.dim(2), s.dim(3));
        if h < k || w < k || (h - k) / stride + 1 != ho || (w - k) / stride + 1 != wo {
            return Err(AdError::invalid(
                "avg_unpool",
                format!("target {h}x{w} does not pool to {ho}x{wo} with k {k} stride {stride}"),
            ));
        }
        let shape = Shape::d4(s.dim(0), s.dim(1), h, w);
        Ok(self.push(Op::AvgUnpool { x, k: k as u32, stride: stride as u32 }, shape))
    }

    /// Max pooling over `k x k` windows (floor semantics, first-maximum tie
    /// break). The node records argmax positions for its adjoint.
    pub fn max_pool(&mut self, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let shape = self.pool_checked("max_pool", x, k, stride)?;
        Ok(self.push(Op::MaxPool { x, k: k as u32, stride: stride as u32 }, shape))
    }

    /// Scatters `g` to the argmax positions recorded on `src`, which must be
    /// a [`Graph::max_pool`] node of matching output shape.
    pub fn pool_scatter(&mut self, g: NodeId, src: NodeId) -> Result<NodeId> {
        self.check(g)?;
        self.check(src)?;
        let (sg, ss) = (self.shape(g), self.shape(src));
        if sg != ss {
            return Err(AdError::shape("pool_scatter", format!("gradient shape {sg} != pool shape {ss}")));
        }
        let (src_in, _k, _s) = match self.nodes[src.index()].op {
            Op::MaxPool { x, k, stride } => (x, k, stride),
            _ => return Err(AdError::invalid("pool_scatter", "src is not a max_pool node")),
        };
        let shape = self.shape(src_in);
        Ok(self.push(Op::PoolScatter { g, src }, shape))
    }

    /// Gathers values of `x` at the argmax positions recorded on `src`.
    pub fn pool_gather(&mut self, x: NodeId, src: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(src)?;
        let (src_in, out_shape) = match self.nodes[src.index()].op {
            Op::MaxPool { x: xi, .. } => (xi, self.shape(src)),
            _ => return Err(AdError::invalid("pool_gather", "src is not a max_pool node")),
        };
        if self.shape(x) != self.shape(src_in) {
            return Err(AdError::shape(
                "pool_gather",
                format!("input shape {} != pool input shape {}", self.shape(x), self.shape(src_in)),
            ));
        }
        Ok(self.push(Op::PoolGather { x, src }, out_shape))
    }

    /// Bilinear sampling of `x: (n, c, h, w)` at constant source pixel
    /// coordinates `grid: (n, ho, wo, 2)` stored `(y, x)`. Out-of-bounds
    /// reads contribute zero. The grid must not require gradients.
    pub fn grid_sample(&mut self, x: NodeId, grid: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(grid)?;
        let (sx, sg) = (self.shape(x), self.shape(grid));
        if sx.ndim() != 4 || sg.ndim() != 4 || sg.dim(3) != 2 || sg.dim(0) != sx.dim(0) {
            return Err(AdError::shape(
                "grid_sample",
                format!("expected x (n,c,h,w) and grid (n,ho,wo,2), got {sx} and {sg}"),
            ));
        }
        if self.requires_grad(grid) {
            return Err(AdError::invalid(
                "grid_sample",
                "grid must be constant (gradients flow through pixels only)",
            ));
        }
        let shape = Shape::d4(sx.dim(0), sx.dim(1), sg.dim(1), sg.dim(2));
        Ok(self.push(Op::GridSample { x, grid }, shape))
    }

    /// Adjoint of [`Graph::grid_sample`]: deposits `g: (n, c, ho, wo)` onto a
    /// zero plane of extent `(h, w)` at the grid's source coordinates.
    pub fn grid_scatter(&mut self, g: NodeId, grid: NodeId, h: usize, w: usize) -> Result<NodeId> {
        self.check(g)?;
        self.check(grid)?;
        let (sg, sgr) = (self.shape(g), self.shape(grid));
        if sg.ndim() != 4 || sgr.ndim() != 4 || sgr.dim(3) != 2 {
            return Err(AdError::shape(
                "grid_scatter",
                format!("expected g (n,c,ho,wo) and grid (n,ho,wo,2), got {sg} and {sgr}"),
            ));
        }
        if sg.dim(0) != sgr.dim(0) || sg.dim(2) != sgr.dim(1) || sg.dim(3) != sgr.dim(2) {
            return Err(AdError::shape(
                "grid_scatter",
                format!("gradient {sg} does not match grid {sgr}"),
            ));
        }
        if self.requires_grad(grid) {
            return Err(AdError::invalid("grid_scatter", "grid must be constant"));
        }
        let shape = Shape::d4(sg.dim(0), sg.dim(1), h, w);
        Ok(self.push(Op::GridScatter { g, grid }, shape))
    }
}
