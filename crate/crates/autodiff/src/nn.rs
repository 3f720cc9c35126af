//! Network-layer composites assembled from primitive ops.
//!
//! Nothing here introduces new derivative rules: every composite is a chain
//! of primitives, so first and second order gradients come from the same
//! reverse sweep. Normalizers use population variance and share one core.

use crate::error::{AdError, Result};
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// `y = x w^T + b` for `x: (n, i)`, `w: (o, i)`, `b: (o)`.
pub fn linear<T: Real>(g: &mut Graph<T>, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
    let wt = g.transpose(w)?;
    let y = g.matmul(x, wt)?;
    match b {
        None => Ok(y),
        Some(b) => {
            let sy = g.shape(y);
            let br = g.reshape(b, Shape::d2(1, g.shape(b).numel()))?;
            let bb = g.broadcast(br, sy)?;
            g.add(y, bb)
        }
    }
}

/// Centers and scales `x` to zero mean and unit variance over the masked
/// axes (population variance, `eps` inside the square root).
fn standardize<T: Real>(g: &mut Graph<T>, x: NodeId, axes: &[usize], eps: f64) -> Result<NodeId> {
    let sx = g.shape(x);
    let n: usize = axes.iter().map(|&a| sx.dim(a)).product();
    let sum = g.sum_axes(x, axes, true)?;
    let mu = g.scale(sum, 1.0 / n as f64)?;
    let mub = g.broadcast(mu, sx)?;
    let xc = g.sub(x, mub)?;
    let sq = g.mul(xc, xc)?;
    let vsum = g.sum_axes(sq, axes, true)?;
    let var = g.scale(vsum, 1.0 / n as f64)?;
    let veps = g.add_scalar(var, eps)?;
    let inv = g.powf(veps, -0.5)?;
    let invb = g.broadcast(inv, sx)?;
    g.mul(xc, invb)
}

/// Applies per-channel `gamma * x + beta` to a rank-4 activation.
fn channel_affine<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: Option<NodeId>,
    beta: Option<NodeId>,
) -> Result<NodeId> {
    let sx = g.shape(x);
    let c = sx.dim(1);
    let lift = |g: &mut Graph<T>, p: NodeId| -> Result<NodeId> {
        let pr = g.reshape(p, Shape::d4(1, c, 1, 1))?;
        g.broadcast(pr, sx)
    };
    let mut y = x;
    if let Some(gamma) = gamma {
        let gb = lift(g, gamma)?;
        y = g.mul(y, gb)?;
    }
    if let Some(beta) = beta {
        let bb = lift(g, beta)?;
        y = g.add(y, bb)?;
    }
    Ok(y)
}

/// Instance normalization of `x: (n, c, h, w)`: statistics per sample and
/// channel over the spatial axes.
pub fn instance_norm<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: Option<NodeId>,
    beta: Option<NodeId>,
    eps: f64,
) -> Result<NodeId> {
    expect_rank4(g, x, "instance_norm")?;
    let xn = standardize(g, x, &[2, 3], eps)?;
    channel_affine(g, xn, gamma, beta)
}

/// Layer normalization: statistics per sample over channels and space.
pub fn layer_norm<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: Option<NodeId>,
    beta: Option<NodeId>,
    eps: f64,
) -> Result<NodeId> {
    expect_rank4(g, x, "layer_norm")?;
    let xn = standardize(g, x, &[1, 2, 3], eps)?;
    channel_affine(g, xn, gamma, beta)
}

/// Group normalization: channels split into `groups` contiguous groups,
/// statistics per sample and group.
pub fn group_norm<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    groups: usize,
    gamma: Option<NodeId>,
    beta: Option<NodeId>,
    eps: f64,
) -> Result<NodeId> {
    expect_rank4(g, x, "group_norm")?;
    let sx = g.shape(x);
    let (n, c, h, w) = (sx.dim(0), sx.dim(1), sx.dim(2), sx.dim(3));
    if groups == 0 || c % groups != 0 {
        return Err(AdError::invalid(
            "group_norm",
            format!("groups {groups} does not divide channels {c}"),
        ));
    }
    let xg = g.reshape(x, Shape::d3(n, groups, (c / groups) * h * w))?;
    let xn = standardize(g, xg, &[2], eps)?;
    let back = g.reshape(xn, sx)?;
    channel_affine(g, back, gamma, beta)
}

/// Batch statistics produced by a training-mode batch norm, for maintaining
/// running averages outside the graph.
pub struct BatchStats<T> {
    /// Per-channel batch mean, length `c`.
    pub mean: Vec<T>,
    /// Per-channel population batch variance, length `c`.
    pub var: Vec<T>,
}

/// Training-mode batch normalization: statistics per channel over batch and
/// space. Returns the output node plus the batch statistics values.
pub fn batch_norm_train<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: Option<NodeId>,
    beta: Option<NodeId>,
    eps: f64,
) -> Result<(NodeId, BatchStats<T>)> {
    expect_rank4(g, x, "batch_norm")?;
    let sx = g.shape(x);
    let c = sx.dim(1);
    let n = sx.numel() / c;
    let xn = standardize(g, x, &[0, 2, 3], eps)?;
    let y = channel_affine(g, xn, gamma, beta)?;

    let xv = g.value(x).data();
    let [_, _, h, w] = sx.padded();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let plane = h * w;
    for (i, v) in xv.iter().enumerate() {
        let ch = (i / plane) % c;
        mean[ch] += *v;
    }
    let inv_n = T::from_f64(1.0 / n as f64);
    for m in mean.iter_mut() {
        *m *= inv_n;
    }
    for (i, v) in xv.iter().enumerate() {
        let ch = (i / plane) % c;
        let d = *v - mean[ch];
        var[ch] += d * d;
    }
    for v in var.iter_mut() {
        *v *= inv_n;
    }
    Ok((y, BatchStats { mean, var }))
}

/// Inference-mode batch normalization with fixed running statistics.
pub fn batch_norm_eval<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    gamma: Option<NodeId>,
    beta: Option<NodeId>,
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Result<NodeId> {
    expect_rank4(g, x, "batch_norm")?;
    let sx = g.shape(x);
    let c = sx.dim(1);
    if running_mean.len() != c || running_var.len() != c {
        return Err(AdError::invalid(
            "batch_norm",
            format!("running stats length {} != channels {c}", running_mean.len()),
        ));
    }
    let eps = T::from_f64(eps);
    let inv: Vec<T> = running_var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let neg_mu: Vec<T> = running_mean.iter().map(|m| -*m).collect();
    let mu_n = g.constant(Tensor::from_vec(Shape::d4(1, c, 1, 1), neg_mu));
    let inv_n = g.constant(Tensor::from_vec(Shape::d4(1, c, 1, 1), inv));
    let mu_b = g.broadcast(mu_n, sx)?;
    let inv_b = g.broadcast(inv_n, sx)?;
    let xc = g.add(x, mu_b)?;
    let xn = g.mul(xc, inv_b)?;
    channel_affine(g, xn, gamma, beta)
}

/// Mean softmax cross-entropy of `logits: (n, c)` against integer labels.
///
/// Uses the shifted log-sum-exp identity with the per-row maximum entering
/// as a constant; the expression (and its derivatives of any order) is
/// exact for any constant shift, the maximum just keeps `exp` in range.
pub fn softmax_cross_entropy<T: Real>(g: &mut Graph<T>, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let s = g.shape(logits);
    if s.ndim() != 2 {
        return Err(AdError::shape("cross_entropy", format!("expected rank-2 logits, got {s}")));
    }
    let (n, c) = (s.dim(0), s.dim(1));
    if labels.len() != n {
        return Err(AdError::invalid(
            "cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(AdError::invalid("cross_entropy", format!("label {bad} out of range 0..{c}")));
    }

    let lv = g.value(logits).data();
    let mut rowmax = vec![T::zero(); n];
    for i in 0..n {
        let row = &lv[i * c..(i + 1) * c];
        rowmax[i] = row.iter().copied().fold(T::neg_infinity(), T::max);
    }
    let mut onehot = vec![T::zero(); n * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = T::one();
    }

    let m = g.constant(Tensor::from_vec(Shape::d2(n, 1), rowmax));
    let oh = g.constant(Tensor::from_vec(s, onehot));
    let mb = g.broadcast(m, s)?;
    let z = g.sub(logits, mb)?;
    let e = g.exp(z)?;
    let se = g.sum_axes(e, &[1], true)?;
    let lse0 = g.log(se)?;
    let lse = g.add(lse0, m)?;
    let picked_all = g.mul(logits, oh)?;
    let picked = g.sum_axes(picked_all, &[1], true)?;
    let per_row = g.sub(lse, picked)?;
    let total = g.sum_all(per_row)?;
    g.scale(total, 1.0 / n as f64)
}

fn expect_rank4<T: Real>(g: &Graph<T>, x: NodeId, op: &'static str) -> Result<()> {
    let s = g.shape(x);
    if s.ndim() != 4 {
        return Err(AdError::shape(op, format!("expected rank 4, got {s}")));
    }
    Ok(())
}
