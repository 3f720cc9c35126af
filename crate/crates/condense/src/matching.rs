//! Gradient grouping and the layerwise matching loss.
//!
//! The distance between two gradient sets is a sum over layers and output
//! nodes of one minus the cosine similarity between the weight-gradient
//! rows feeding that node. The denominator is guarded by `eps`, so a row
//! with zero norm on either side contributes exactly 1 and stays smoothly
//! differentiable.
//!
//! The synthetic branch is built in-graph: its weight gradients are graph
//! nodes, so differentiating the distance with respect to synthetic pixels
//! runs gradients of gradients through the same reverse sweep. The real
//! branch enters as plain numbers, which keeps it constant with respect to
//! the synthetic images and halves the graph that has to stay alive.

use crate::augment::{self, AugError, AugParam};
use crate::batch::ImageBatch;
use crate::zoo::{ForwardOpts, Network, ZooError};
use autodiff::{nn, AdError, Graph, NodeId, Real, Shape, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("batch is not single-class: expected every label to be {expected}, found {found} at index {index}")]
    MixedClass { expected: usize, found: usize, index: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch geometry mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gradient sets differ: {0}")]
    LayerMismatch(String),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error(transparent)]
    Zoo(#[from] ZooError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Gradients of one parameter tensor, viewed as `rows` rows of length
/// `row_len`, one row per output node.
#[derive(Clone, Debug)]
pub struct GradLayer<T> {
    pub name: String,
    pub rows: usize,
    pub row_len: usize,
    pub data: Vec<T>,
}

/// All matched layers of one network state, in architecture order.
#[derive(Clone, Debug)]
pub struct GradSet<T> {
    pub layers: Vec<GradLayer<T>>,
}

impl<T: Real> GradSet<T> {
    /// Euclidean norm of each layer's gradient block.
    pub fn layer_norms(&self) -> Vec<T> {
        self.layers
            .iter()
            .map(|l| l.data.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b).sqrt())
            .collect()
    }

    /// Euclidean norm of every gradient row, all layers concatenated in
    /// architecture order.
    pub fn row_norms(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            for r in 0..l.rows {
                let row = &l.data[r * l.row_len..(r + 1) * l.row_len];
                out.push(row.iter().map(|v| *v * *v).fold(T::zero(), |a, b| a + b).sqrt());
            }
        }
        out
    }

    /// Euclidean norm of the whole set.
    pub fn total_norm(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.data.iter())
            .map(|v| *v * *v)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }
}

/// Matching-loss value with its per-layer breakdown.
#[derive(Clone, Debug)]
pub struct MatchingLoss<T> {
    pub total: T,
    pub per_layer: Vec<T>,
}

/// Options shared by every matching entry point.
#[derive(Clone, Copy, Debug)]
pub struct MatchOptions {
    /// Cosine denominator guard.
    pub eps: f64,
    /// Match normalization affine parameters in addition to weights.
    pub include_norm_affine: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { eps: 1e-6, include_norm_affine: false }
    }
}

/// How a batch is augmented before its gradients are taken: not at all,
/// with one transform shared by every image, or with one transform per
/// image.
#[derive(Clone, Debug, PartialEq)]
pub enum AugPlan {
    None,
    Shared(AugParam),
    PerImage(Vec<AugParam>),
}

fn check_single_class<T: Real>(batch: &ImageBatch<T>, class: usize) -> Result<(), MatchError> {
    if batch.n() == 0 {
        return Err(MatchError::EmptyBatch);
    }
    for (index, &label) in batch.labels().iter().enumerate() {
        if label != class {
            return Err(MatchError::MixedClass { expected: class, found: label, index });
        }
    }
    Ok(())
}

/// Full distance between two gradient sets, in plain values.
pub fn layer_gradient_distance<T: Real>(
    a: &GradSet<T>,
    b: &GradSet<T>,
    eps: f64,
) -> Result<MatchingLoss<T>, MatchError> {
    if a.layers.len() != b.layers.len() {
        return Err(MatchError::LayerMismatch(format!(
            "{} layers vs {}",
            a.layers.len(),
            b.layers.len()
        )));
    }
    let epst = T::from_f64(eps);
    let mut per_layer = Vec::with_capacity(a.layers.len());
    let mut total = T::zero();
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        if la.rows != lb.rows || la.row_len != lb.row_len {
            return Err(MatchError::LayerMismatch(format!(
                "layer {}: {}x{} vs {}x{}",
                la.name, la.rows, la.row_len, lb.rows, lb.row_len
            )));
        }
        let mut layer_sum = T::zero();
        for r in 0..la.rows {
            let ra = &la.data[r * la.row_len..(r + 1) * la.row_len];
            let rb = &lb.data[r * lb.row_len..(r + 1) * lb.row_len];
            let mut dot = T::zero();
            let mut na = T::zero();
            let mut nb = T::zero();
            for (x, y) in ra.iter().zip(rb) {
                dot += *x * *y;
                na += *x * *x;
                nb += *y * *y;
            }
            let den = (na * nb).sqrt().max(epst);
            layer_sum += T::one() - dot / den;
        }
        per_layer.push(layer_sum);
        total += layer_sum;
    }
    Ok(MatchingLoss { total, per_layer })
}

/// A weight-gradient node inside a graph, with its row structure.
#[derive(Clone, Copy, Debug)]
pub struct LayerGradNode {
    pub node: NodeId,
    pub rows: usize,
    pub row_len: usize,
}

/// Builds the distance between in-graph gradients `syn` and fixed gradients
/// `real` as a graph expression, returning the scalar node and the
/// per-layer scalar nodes.
pub fn distance_node<T: Real>(
    g: &mut Graph<T>,
    syn: &[LayerGradNode],
    real: &[&GradLayer<T>],
    eps: f64,
) -> Result<(NodeId, Vec<NodeId>), MatchError> {
    if syn.len() != real.len() {
        return Err(MatchError::LayerMismatch(format!(
            "{} layers vs {}",
            syn.len(),
            real.len()
        )));
    }
    let mut per_layer = Vec::with_capacity(syn.len());
    let mut total: Option<NodeId> = None;
    for (s, r) in syn.iter().zip(real) {
        if s.rows != r.rows || s.row_len != r.row_len {
            return Err(MatchError::LayerMismatch(format!(
                "layer {}: {}x{} vs {}x{}",
                r.name, s.rows, s.row_len, r.rows, r.row_len
            )));
        }
        let shape = Shape::d2(s.rows, s.row_len);
        let a = g.reshape(s.node, shape)?;
        let b = g.constant(Tensor::from_vec(shape, r.data.clone()));
        let ab = g.mul(a, b)?;
        let dot = g.sum_axes(ab, &[1], true)?;
        let aa = g.mul(a, a)?;
        let na = g.sum_axes(aa, &[1], true)?;
        let bb = g.mul(b, b)?;
        let nb = g.sum_axes(bb, &[1], true)?;
        let prod = g.mul(na, nb)?;
        let guarded = g.clamp_min(prod, eps * eps)?;
        let den = g.powf(guarded, 0.5)?;
        let cos = g.div(dot, den)?;
        let ncos = g.neg(cos)?;
        let dist = g.add_scalar(ncos, 1.0)?;
        let layer = g.sum_all(dist)?;
        per_layer.push(layer);
        total = Some(match total {
            None => layer,
            Some(t) => g.add(t, layer)?,
        });
    }
    let total = total.ok_or_else(|| MatchError::LayerMismatch("no layers to match".into()))?;
    Ok((total, per_layer))
}

fn apply_aug<T: Real>(g: &mut Graph<T>, x: NodeId, aug: &AugPlan) -> Result<NodeId, MatchError> {
    Ok(match aug {
        AugPlan::None => x,
        AugPlan::Shared(p) => augment::apply(g, x, p)?,
        AugPlan::PerImage(ps) => augment::apply_each(g, x, ps)?,
    })
}

/// Builds forward, cross-entropy, and weight-gradient nodes for a batch
/// already present in `g` as `images`.
pub fn weight_grad_nodes<T: Real>(
    g: &mut Graph<T>,
    net: &Network<T>,
    images: NodeId,
    labels: &[usize],
    opts: &MatchOptions,
) -> Result<(Vec<LayerGradNode>, Vec<String>, NodeId), MatchError> {
    let pass = net.forward(g, images, ForwardOpts::train())?;
    let loss = nn::softmax_cross_entropy(g, pass.logits, labels)?;
    let matchable = net.matchable_params(opts.include_norm_affine);
    let wrt: Vec<NodeId> = matchable.iter().map(|&i| pass.param_nodes[i]).collect();
    let grads = g.gradient(loss, &wrt)?;
    let mut nodes = Vec::with_capacity(matchable.len());
    let mut names = Vec::with_capacity(matchable.len());
    for (&i, lg) in matchable.iter().zip(&grads) {
        let (rows, row_len) = net.params[i].grad_rows();
        nodes.push(LayerGradNode { node: lg.grad, rows, row_len });
        names.push(net.params[i].name.clone());
    }
    Ok((nodes, names, loss))
}

/// Computes the matched weight gradients of a cross-entropy loss over an
/// (optionally augmented) batch, as plain values.
pub fn grad_set_for_batch<T: Real>(
    net: &Network<T>,
    batch: &ImageBatch<T>,
    aug: &AugPlan,
    opts: &MatchOptions,
) -> Result<GradSet<T>, MatchError> {
    if batch.n() == 0 {
        return Err(MatchError::EmptyBatch);
    }
    let mut g = Graph::new();
    let x = g.constant(batch.images().clone());
    let xa = apply_aug(&mut g, x, aug)?;
    let (nodes, names, _) = weight_grad_nodes(&mut g, net, xa, batch.labels(), opts)?;
    let layers = nodes
        .iter()
        .zip(names)
        .map(|(n, name)| GradLayer {
            name,
            rows: n.rows,
            row_len: n.row_len,
            data: g.value(n.node).to_vec(),
        })
        .collect();
    Ok(GradSet { layers })
}

/// Result of one synthetic matching evaluation.
#[derive(Clone, Debug)]
pub struct MatchResult<T> {
    pub loss: MatchingLoss<T>,
    /// Gradient of the total loss with respect to the synthetic pixels.
    pub grad_syn: Tensor<T>,
}

/// Evaluates the matching loss of a synthetic class batch against
/// precomputed real gradient sets, one per sampled transform, and
/// differentiates it with respect to the synthetic pixels.
///
/// With several transforms the loss is the sum of the per-transform
/// distances, each synthetic branch augmented by its own plan.
pub fn syn_matching_step<T: Real>(
    net: &Network<T>,
    syn: &ImageBatch<T>,
    class: usize,
    plans: &[AugPlan],
    real_sets: &[GradSet<T>],
    opts: &MatchOptions,
) -> Result<MatchResult<T>, MatchError> {
    check_single_class(syn, class)?;
    if plans.len() != real_sets.len() || plans.is_empty() {
        return Err(MatchError::LayerMismatch(format!(
            "{} augmentation plans vs {} real gradient sets",
            plans.len(),
            real_sets.len()
        )));
    }
    let mut g = Graph::new();
    let s = g.leaf(syn.images().clone());
    let mut total: Option<NodeId> = None;
    let mut per_layer_vals: Vec<T> = Vec::new();
    for (plan, real) in plans.iter().zip(real_sets) {
        let sa = apply_aug(&mut g, s, plan)?;
        let (nodes, _, _) = weight_grad_nodes(&mut g, net, sa, syn.labels(), opts)?;
        let refs: Vec<&GradLayer<T>> = real.layers.iter().collect();
        let (d, layer_nodes) = distance_node(&mut g, &nodes, &refs, opts.eps)?;
        if per_layer_vals.is_empty() {
            per_layer_vals = vec![T::zero(); layer_nodes.len()];
        }
        for (acc, ln) in per_layer_vals.iter_mut().zip(&layer_nodes) {
            *acc += g.value(*ln).item();
        }
        total = Some(match total {
            None => d,
            Some(t) => g.add(t, d)?,
        });
    }
    let total = total.expect("at least one transform");
    let value = g.value(total).item();
    let lg = g.gradient_one(total, s)?;
    let grad_syn = g.value(lg.grad).clone();
    Ok(MatchResult {
        loss: MatchingLoss { total: value, per_layer: per_layer_vals },
        grad_syn,
    })
}

/// The full matching loss for one class: gradients from the real batch and
/// the synthetic batch under one shared transform, their layerwise cosine
/// distance, and its gradient with respect to the synthetic pixels.
pub fn matching_loss<T: Real>(
    net: &Network<T>,
    syn: &ImageBatch<T>,
    real: &ImageBatch<T>,
    class: usize,
    omega: &AugParam,
    opts: &MatchOptions,
) -> Result<MatchResult<T>, MatchError> {
    check_single_class(syn, class)?;
    check_single_class(real, class)?;
    if (syn.channels(), syn.height(), syn.width()) != (real.channels(), real.height(), real.width()) {
        return Err(MatchError::ShapeMismatch(format!(
            "synthetic {}x{}x{} vs real {}x{}x{}",
            syn.channels(),
            syn.height(),
            syn.width(),
            real.channels(),
            real.height(),
            real.width()
        )));
    }
    let real_set = grad_set_for_batch(net, real, &AugPlan::Shared(omega.clone()), opts)?;
    let plan = AugPlan::Shared(omega.clone());
    syn_matching_step(net, syn, class, std::slice::from_ref(&plan), &[real_set], opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use crate::zoo::ArchSpec;

    fn layer(name: &str, rows: usize, len: usize, data: Vec<f64>) -> GradLayer<f64> {
        GradLayer { name: name.into(), rows, row_len: len, data }
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let a = GradSet { layers: vec![layer("w", 2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0])] };
        let d = layer_gradient_distance(&a, &a, 1e-6).unwrap();
        assert_eq!(d.total, 0.0);
        assert_eq!(d.per_layer, vec![0.0]);
    }

    #[test]
    fn orthogonal_and_opposite_rows() {
        let a = GradSet { layers: vec![layer("w", 2, 2, vec![1.0, 0.0, 2.0, 0.0])] };
        let b = GradSet { layers: vec![layer("w", 2, 2, vec![0.0, 1.0, -2.0, 0.0])] };
        let d = layer_gradient_distance(&a, &b, 1e-6).unwrap();
        assert!((d.per_layer[0] - 3.0).abs() < 1e-12, "1 + 2 = {}", d.per_layer[0]);
    }

    #[test]
    fn zero_norm_row_contributes_one() {
        let a = GradSet { layers: vec![layer("w", 1, 2, vec![0.0, 0.0])] };
        let b = GradSet { layers: vec![layer("w", 1, 2, vec![3.0, 4.0])] };
        let d = layer_gradient_distance(&a, &b, 1e-6).unwrap();
        assert_eq!(d.total, 1.0);
    }

    #[test]
    fn mismatched_layers_error() {
        let a = GradSet { layers: vec![layer("w", 1, 2, vec![0.0, 0.0])] };
        let b = GradSet { layers: vec![layer("w", 2, 1, vec![3.0, 4.0])] };
        assert!(matches!(
            layer_gradient_distance(&a, &b, 1e-6),
            Err(MatchError::LayerMismatch(_))
        ));
    }

    #[test]
    fn mixed_class_batches_are_rejected() {
        let net = Network::<f64>::init(
            ArchSpec::mlp((1, 2, 2), 2),
            &mut seeds::derive(1, &[seeds::tag::NETWORK_INIT]),
        )
        .unwrap();
        let syn = ImageBatch::from_vec(vec![0.1; 8], 2, 1, 2, 2, vec![0, 0]);
        let real = ImageBatch::from_vec(vec![0.2; 8], 2, 1, 2, 2, vec![0, 1]);
        match matching_loss(&net, &syn, &real, 0, &AugParam::Identity, &MatchOptions::default()) {
            Err(MatchError::MixedClass { expected: 0, found: 1, index: 1 }) => {}
            other => panic!("expected MixedClass, got {other:?}"),
        }
    }

    #[test]
    fn identical_batches_and_transform_give_zero_loss() {
        let mut spec = ArchSpec::mlp((1, 3, 3), 3);
        spec.activation = crate::zoo::Activation::Sigmoid;
        let net = Network::<f64>::init(
            spec,
            &mut seeds::derive(2, &[seeds::tag::NETWORK_INIT]),
        )
        .unwrap();
        let data: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let batch = ImageBatch::from_vec(data, 2, 1, 3, 3, vec![1, 1]);
        let omega = AugParam::Color { shift: 0.2, saturation: 1.0, contrast: 1.1 };
        let opts = MatchOptions { eps: 1e-150, ..MatchOptions::default() };
        let r = matching_loss(&net, &batch, &batch, 1, &omega, &opts).unwrap();
        assert!(r.loss.total.abs() < 1e-9, "loss {}", r.loss.total);
    }

    #[test]
    fn guard_floors_the_denominator_of_faint_rows() {
        let a = GradSet { layers: vec![layer("w", 1, 2, vec![3e-4, 4e-4])] };
        let d = layer_gradient_distance(&a, &a, 1e-6).unwrap();
        let norm2 = 25e-8;
        let expect = 1.0 - norm2 / 1e-6;
        assert!((d.total - expect).abs() < 1e-12, "{} vs {expect}", d.total);
        let strong = GradSet { layers: vec![layer("w", 1, 2, vec![3e-3, 4e-3])] };
        let d2 = layer_gradient_distance(&strong, &strong, 1e-6).unwrap();
        assert_eq!(d2.total, 0.0);
    }

    #[test]
    fn graph_distance_agrees_with_value_oracle() {
        let mut rng = seeds::derive(3, &[seeds::tag::NETWORK_INIT]);
        let net = Network::<f64>::init(ArchSpec::mlp((1, 2, 3), 2), &mut rng).unwrap();
        let opts = MatchOptions::default();
        let syn = ImageBatch::from_vec((0..12).map(|i| 0.1 * i as f64).collect(), 2, 1, 2, 3, vec![0, 0]);
        let real = ImageBatch::from_vec((0..18).map(|i| (i as f64).cos()).collect(), 3, 1, 2, 3, vec![0, 0, 0]);
        let omega = AugParam::Crop { dy: 1, dx: 0 };
        let pipeline = matching_loss(&net, &syn, &real, 0, &omega, &opts).unwrap();

        let real_set = grad_set_for_batch(&net, &real, &AugPlan::Shared(omega.clone()), &opts).unwrap();
        let syn_set = grad_set_for_batch(&net, &syn, &AugPlan::Shared(omega), &opts).unwrap();
        let oracle = layer_gradient_distance(&syn_set, &real_set, opts.eps).unwrap();
        assert!(
            (pipeline.loss.total - oracle.total).abs() < 1e-10,
            "{} vs {}",
            pipeline.loss.total,
            oracle.total
        );
        for (a, b) in pipeline.loss.per_layer.iter().zip(&oracle.per_layer) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn multi_transform_loss_is_the_sum_of_single_losses() {
        let mut rng = seeds::derive(4, &[seeds::tag::NETWORK_INIT]);
        let net = Network::<f64>::init(ArchSpec::mlp((1, 4, 4), 2), &mut rng).unwrap();
        let opts = MatchOptions::default();
        let syn = ImageBatch::from_vec((0..32).map(|i| (i as f64 * 0.21).sin()).collect(), 2, 1, 4, 4, vec![1, 1]);
        let real = ImageBatch::from_vec((0..48).map(|i| (i as f64 * 0.13).cos()).collect(), 3, 1, 4, 4, vec![1, 1, 1]);
        let o1 = AugParam::Crop { dy: 0, dx: 1 };
        let o2 = AugParam::Color { shift: -0.3, saturation: 1.4, contrast: 0.9 };
        let p1 = AugPlan::Shared(o1);
        let p2 = AugPlan::Shared(o2);
        let r1 = grad_set_for_batch(&net, &real, &p1, &opts).unwrap();
        let r2 = grad_set_for_batch(&net, &real, &p2, &opts).unwrap();

        let both = syn_matching_step(&net, &syn, 1, &[p1.clone(), p2.clone()], &[r1.clone(), r2.clone()], &opts).unwrap();
        let single1 = syn_matching_step(&net, &syn, 1, &[p1], &[r1], &opts).unwrap();
        let single2 = syn_matching_step(&net, &syn, 1, &[p2], &[r2], &opts).unwrap();
        assert!(
            (both.loss.total - single1.loss.total - single2.loss.total).abs() < 1e-10
        );
        let gs: Vec<f64> = both.grad_syn.data().to_vec();
        for (i, g) in gs.iter().enumerate() {
            let expect = single1.grad_syn.data()[i] + single2.grad_syn.data()[i];
            assert!((g - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_synthetic_pixels_keep_finite_gradients() {
        let mut rng = seeds::derive(5, &[seeds::tag::NETWORK_INIT]);
        let net = Network::<f64>::init(ArchSpec::mlp((1, 3, 3), 2), &mut rng).unwrap();
        let syn = ImageBatch::from_vec(vec![0.0; 9], 1, 1, 3, 3, vec![0]);
        let real = ImageBatch::from_vec((0..18).map(|i| 0.3 * i as f64).collect(), 2, 1, 3, 3, vec![0, 0]);
        let r = matching_loss(&net, &syn, &real, 0, &AugParam::Identity, &MatchOptions::default()).unwrap();
        assert!(r.loss.total.is_finite());
        assert!(r.grad_syn.all_finite());
    }
}
