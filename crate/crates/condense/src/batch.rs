//! Labeled image batches in `(N, C, H, W)` layout.

use autodiff::{Real, Shape, Tensor};

/// A batch of images with one label per image.
///
/// Images are stored as a rank-4 tensor `(N, C, H, W)`; labels are class
/// indices aligned with the leading axis. The two lengths always agree.
#[derive(Clone, Debug)]
pub struct ImageBatch<T> {
    images: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Real> ImageBatch<T> {
    /// Wraps a rank-4 tensor and its labels. Panics if the tensor is not
    /// rank 4 or the label count differs from the batch size.
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Self {
        assert_eq!(images.shape().ndim(), 4, "images must be (N, C, H, W)");
        assert_eq!(
            images.shape().dim(0),
            labels.len(),
            "label count must match batch size"
        );
        Self { images, labels }
    }

    /// Builds a batch from a flat pixel vector.
    pub fn from_vec(data: Vec<T>, n: usize, c: usize, h: usize, w: usize, labels: Vec<usize>) -> Self {
        Self::new(Tensor::from_vec(Shape::d4(n, c, h, w), data), labels)
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.images.shape().dim(0)
    }

    pub fn channels(&self) -> usize {
        self.images.shape().dim(1)
    }

    pub fn height(&self) -> usize {
        self.images.shape().dim(2)
    }

    pub fn width(&self) -> usize {
        self.images.shape().dim(3)
    }

    /// Pixels per image.
    pub fn image_len(&self) -> usize {
        self.channels() * self.height() * self.width()
    }

    /// Copies the selected images (by index, in order) into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let len = self.image_len();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            assert!(i < self.n(), "index {i} out of bounds for batch of {}", self.n());
            data.extend_from_slice(&src[i * len..(i + 1) * len]);
            labels.push(self.labels[i]);
        }
        Self::from_vec(data, indices.len(), self.channels(), self.height(), self.width(), labels)
    }

    /// Indices of all images carrying the given label.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// True when every label equals `class`.
    pub fn is_single_class(&self, class: usize) -> bool {
        self.labels.iter().all(|&l| l == class)
    }

    /// Largest label plus one, or zero for an empty batch.
    pub fn max_label_excl(&self) -> usize {
        self.labels.iter().map(|&l| l + 1).max().unwrap_or(0)
    }
}
