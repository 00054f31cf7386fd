use thiserror::Error;

use crate::network::NodeId;

/// Error type shared by the toolkit's modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument referred to something that does not exist or violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unknown node {node} (network has {count} nodes)")]
    UnknownNode { node: NodeId, count: usize },

    #[error("node {node} is not an incoming neighbor of node {of}")]
    NotIncomingNeighbor { node: NodeId, of: NodeId },

    /// Shapes or dimensions do not line up.
    #[error("structural mismatch: {0}")]
    Structure(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value in {term}")]
    NumericalDomain { term: String },

    #[error("feasible set is empty{}", .context.as_ref().map(|c| format!(": {c}")).unwrap_or_default())]
    Infeasible { context: Option<String> },

    #[error("allowed action set of node {node} is empty (binding half-spaces from nodes {binding:?})")]
    NodeInfeasible { node: NodeId, binding: Vec<NodeId> },

    #[error("control dimension {dim} exceeds the enumeration limit {limit}")]
    UnsupportedDimension { dim: usize, limit: usize },

    /// The linear safety maximizer is not unique (some entry of L_g h is zero).
    #[error("ill-posed: linear maximizer is not unique (zero entry in L_g h at coordinate {coordinate})")]
    IllPosed { coordinate: usize },

    #[error("consistency violation: {0}")]
    Consistency(String),

    #[error("integration blew up at t = {time}")]
    IntegrationBlowup { time: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
