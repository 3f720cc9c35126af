//! Finite-value guarantees for the numerically delicate patterns the
//! training loss leans on: guarded square roots at zero, shifted softmax
//! with extreme logits, normalization of constant inputs.

use autodiff::{nn, Graph, Shape, Tensor};

/// The guarded cosine pattern: numerator a.b, denominator
/// sqrt(clamp(|a|^2 |b|^2, eps^2)). Gradients must stay finite even when a
/// vector is exactly zero, where an unguarded sqrt would produce 0 * inf.
fn cosine_loss(g: &mut Graph<f64>, a: autodiff::NodeId, b: autodiff::NodeId) -> autodiff::NodeId {
    let ab = g.mul(a, b).unwrap();
    let num = g.sum_all(ab).unwrap();
    let aa = g.mul(a, a).unwrap();
    let daa = g.sum_all(aa).unwrap();
    let bb = g.mul(b, b).unwrap();
    let dbb = g.sum_all(bb).unwrap();
    let prod = g.mul(daa, dbb).unwrap();
    let guarded = g.clamp_min(prod, 1e-12).unwrap();
    let den = g.powf(guarded, 0.5).unwrap();
    let cos = g.div(num, den).unwrap();
    let neg = g.neg(cos).unwrap();
    g.add_scalar(neg, 1.0).unwrap()
}

#[test]
fn guarded_cosine_survives_zero_vectors() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::zeros(Shape::d1(4)));
    let b = g.leaf(Tensor::from_vec(Shape::d1(4), vec![1.0, -2.0, 0.5, 3.0]));
    let loss = cosine_loss(&mut g, a, b);
    assert_eq!(g.value(loss).item(), 1.0);
    let grads = g.gradient(loss, &[a, b]).unwrap();
    assert!(g.value(grads[0].grad).all_finite());
    assert!(g.value(grads[1].grad).all_finite());
}

#[test]
fn guarded_cosine_survives_both_zero() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::zeros(Shape::d1(4)));
    let b = g.leaf(Tensor::zeros(Shape::d1(4)));
    let loss = cosine_loss(&mut g, a, b);
    assert_eq!(g.value(loss).item(), 1.0);
    let grads = g.gradient(loss, &[a, b]).unwrap();
    assert!(g.value(grads[0].grad).all_finite());
    assert!(g.value(grads[1].grad).all_finite());
}

#[test]
fn unguarded_sqrt_at_zero_would_blow_up() {
    // demonstrates why the clamp sits inside the square root chain
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(0.0));
    let s = g.powf(x, 0.5).unwrap();
    let lg = g.gradient_one(s, x).unwrap();
    assert!(!g.value(lg.grad).item().is_finite());

    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(0.0));
    let c = g.clamp_min(x, 1e-12).unwrap();
    let s = g.powf(c, 0.5).unwrap();
    let lg = g.gradient_one(s, x).unwrap();
    assert!(g.value(lg.grad).item().is_finite());
}

#[test]
fn cross_entropy_with_extreme_logits_stays_finite() {
    let mut g = Graph::<f64>::new();
    let logits = g.leaf(Tensor::from_vec(
        Shape::d2(2, 3),
        vec![1e4, -1e4, 0.0, -5e3, 5e3, 2.5e3],
    ));
    let loss = nn::softmax_cross_entropy(&mut g, logits, &[1, 0]).unwrap();
    assert!(g.value(loss).item().is_finite());
    let lg = g.gradient_one(loss, logits).unwrap();
    assert!(g.value(lg.grad).all_finite());
}

#[test]
fn saturated_cross_entropy_is_near_zero() {
    let mut g = Graph::<f64>::new();
    let logits = g.leaf(Tensor::from_vec(Shape::d2(1, 2), vec![50.0, -50.0]));
    let loss = nn::softmax_cross_entropy(&mut g, logits, &[0]).unwrap();
    assert!(g.value(loss).item().abs() < 1e-12);
    let lg = g.gradient_one(loss, logits).unwrap();
    assert!(g.value(lg.grad).all_finite());
}

#[test]
fn instance_norm_of_constant_input_has_finite_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::full(Shape::d4(1, 2, 3, 3), 4.2));
    let y = nn::instance_norm(&mut g, x, None, None, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|v| v.abs() < 1e-9));
    let loss = g.sum_all(y).unwrap();
    let lg = g.gradient_one(loss, x).unwrap();
    assert!(g.value(lg.grad).all_finite());
}

#[test]
fn second_order_through_guarded_cosine_is_finite() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::from_vec(Shape::d1(3), vec![0.0, 0.0, 0.0]));
    let b = g.leaf(Tensor::from_vec(Shape::d1(3), vec![1.0, 2.0, 3.0]));
    let loss = cosine_loss(&mut g, a, b);
    let first = g.gradient_one(loss, b).unwrap();
    let sq = g.mul(first.grad, first.grad).unwrap();
    let s = g.sum_all(sq).unwrap();
    let second = g.gradient_one(s, b).unwrap();
    assert!(g.value(second.grad).all_finite());
}
