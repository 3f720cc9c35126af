use std::sync::Arc;

use crate::real::Real;
use crate::shape::Shape;

/// Immutable dense array with shared storage.
///
/// Cloning a tensor is cheap (bumps the refcount); node values in a graph
/// and snapshots taken by callers can alias the same buffer safely because
/// nothing mutates storage after construction.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(
            shape.numel(),
            data.len(),
            "tensor data length {} does not match shape {shape}",
            data.len()
        );
        Tensor { shape, data: Arc::new(data) }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::from_vec(shape, vec![T::zero(); shape.numel()])
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor::from_vec(shape, vec![v; shape.numel()])
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(Shape::scalar(), vec![v])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// The single element of a scalar (or any one-element) tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {}", self.shape);
        self.data[0]
    }

    /// Same storage viewed under a different shape with equal element count.
    pub fn reshaped(&self, shape: Shape) -> Self {
        assert_eq!(self.shape.numel(), shape.numel());
        Tensor { shape, data: Arc::clone(&self.data) }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_shares_storage() {
        let t = Tensor::<f32>::from_vec(Shape::d2(2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let u = t.clone();
        assert!(std::ptr::eq(t.data(), u.data()));
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::<f64>::from_vec(Shape::d2(2, 3), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let u = t.reshaped(Shape::d3(3, 2, 1));
        assert_eq!(u.shape(), Shape::d3(3, 2, 1));
        assert_eq!(u.data(), t.data());
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_length_mismatch() {
        let _ = Tensor::<f32>::from_vec(Shape::d1(3), vec![1.0]);
    }
}
