use crate::graph::NodeId;
use crate::shape::Shape;

#[derive(Debug, thiserror::Error)]
pub enum AdError {
    #[error("{op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    #[error("gradient root must be scalar, got shape {0}")]
    NonScalarRoot(Shape),

    #[error("gradient target {0:?} is not a leaf")]
    NotALeaf(NodeId),

    #[error("node {0:?} does not belong to this graph")]
    UnknownNode(NodeId),

    #[error("leaf {id:?} holds shape {expect}, rebind got {got}")]
    RebindShape { id: NodeId, expect: Shape, got: Shape },
}

impl AdError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AdError::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        AdError::InvalidArg { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, AdError>;
