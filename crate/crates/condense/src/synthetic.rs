//! The condensed set produced by an optimization run.

use crate::batch::ImageBatch;
use crate::data::Normalization;
use autodiff::{Shape, Tensor};

/// Matching-loss history, one mean value per outer iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub per_iter: Vec<f32>,
}

impl LossTrace {
    pub fn final_loss(&self) -> Option<f32> {
        self.per_iter.last().copied()
    }
}

/// A learned synthetic set: `classes * ipc` images grouped by class, with
/// the normalization record and configuration needed to reproduce and
/// evaluate it.
#[derive(Clone, Debug)]
pub struct SyntheticSet {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub ipc: usize,
    pub dataset: String,
    pub norm: Normalization,
    pub config_text: String,
    pub trace: LossTrace,
}

impl SyntheticSet {
    /// Assembles a set from per-class image blocks laid out class-major:
    /// image `i` belongs to class `i / ipc`.
    pub fn new(
        images: Tensor<f32>,
        classes: usize,
        ipc: usize,
        dataset: &str,
        norm: Normalization,
    ) -> Self {
        assert_eq!(images.shape().ndim(), 4);
        assert_eq!(images.shape().dim(0), classes * ipc);
        let labels = (0..classes * ipc).map(|i| i / ipc).collect();
        Self {
            images,
            labels,
            classes,
            ipc,
            dataset: dataset.to_string(),
            norm,
            config_text: String::new(),
            trace: LossTrace::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.classes * self.ipc
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

    /// Index range of class `c` in the image tensor.
    pub fn class_range(&self, c: usize) -> std::ops::Range<usize> {
        c * self.ipc..(c + 1) * self.ipc
    }

    /// The whole set as a labeled batch (shares pixel storage).
    pub fn batch(&self) -> ImageBatch<f32> {
        ImageBatch::new(self.images.clone(), self.labels.clone())
    }

    /// The images of one class as a single-class batch (copies pixels).
    pub fn class_batch(&self, c: usize) -> ImageBatch<f32> {
        let len = self.channels() * self.height() * self.width();
        let range = self.class_range(c);
        let data = self.images.data()[range.start * len..range.end * len].to_vec();
        ImageBatch::from_vec(data, self.ipc, self.channels(), self.height(), self.width(), vec![c; self.ipc])
    }

    /// Replaces the pixels of class `c` with `data` (length `ipc * C * H * W`).
    pub fn set_class_pixels(&mut self, c: usize, data: &[f32]) {
        let len = self.channels() * self.height() * self.width();
        let range = self.class_range(c);
        assert_eq!(data.len(), self.ipc * len);
        let mut all = self.images.to_vec();
        all[range.start * len..range.end * len].copy_from_slice(data);
        self.images = Tensor::from_vec(self.images.shape(), all);
    }

    /// Builds an all-zero set with the given geometry.
    pub fn zeros(
        classes: usize,
        ipc: usize,
        c: usize,
        h: usize,
        w: usize,
        dataset: &str,
        norm: Normalization,
    ) -> Self {
        let images = Tensor::zeros(Shape::d4(classes * ipc, c, h, w));
        Self::new(images, classes, ipc, dataset, norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm() -> Normalization {
        Normalization { mean: vec![0.5], std: vec![0.25] }
    }

    #[test]
    fn labels_group_by_class() {
        let set = SyntheticSet::zeros(3, 2, 1, 2, 2, "mnist", norm());
        assert_eq!(set.labels, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(set.class_range(1), 2..4);
    }

    #[test]
    fn class_pixel_round_trip() {
        let mut set = SyntheticSet::zeros(2, 1, 1, 2, 2, "mnist", norm());
        set.set_class_pixels(1, &[1.0, 2.0, 3.0, 4.0]);
        let b = set.class_batch(1);
        assert_eq!(b.images().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(b.is_single_class(1));
        assert_eq!(set.class_batch(0).images().data(), &[0.0; 4]);
    }
}
