//! Dataset condensation by gradient matching with differentiable siamese
//! augmentation.
//!
//! The toolkit learns a small synthetic image set whose training gradients
//! imitate those of a large real dataset, then evaluates the learned set by
//! training fresh networks on it. Augmentation is applied inside the
//! differentiation graph with one shared parameter draw per real/synthetic
//! pair, so the matching signal survives augmented training.

pub mod augment;
pub mod batch;
pub mod config;
pub mod data;
pub mod engine;
pub mod eval;
pub mod matching;
pub mod nas;
pub mod report;
pub mod seeds;
pub mod synthetic;
pub mod zoo;

pub use batch::ImageBatch;
pub use synthetic::{LossTrace, SyntheticSet};
