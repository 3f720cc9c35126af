//! Reverse-mode automatic differentiation over dense arrays of rank 0 to 4.
//!
//! The central type is [`Graph`]: a define-by-run trace whose nodes hold
//! values computed at construction time. [`Graph::gradient`] appends
//! adjoint expressions as ordinary nodes, which makes gradients first-class
//! citizens: they can be read out, combined into new losses, and
//! differentiated again. That closure under differentiation is the property
//! the gradient-matching training loop relies on.
//!
//! Design constraints the implementation commits to:
//!
//! * deterministic execution: all kernels are single threaded, the GEMM
//!   backend runs unthreaded, and replaying a graph on identical leaf
//!   values is bit-identical;
//! * explicit shapes: elementwise ops require exact shape equality and all
//!   broadcasting is spelled out, so shape bugs surface at build time;
//! * dual precision: everything is generic over [`Real`] (`f32` for
//!   training speed, `f64` for finite-difference verification).

mod error;
mod graph;
mod kernels;
mod ops;
mod real;
mod shape;
mod tensor;
mod vjp;

pub mod gradcheck;
pub mod nn;

pub use error::{AdError, Result};
pub use graph::{Graph, LeafGrad, NodeId, Op};
pub use real::Real;
pub use shape::Shape;
pub use tensor::Tensor;
