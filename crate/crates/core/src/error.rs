use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HdmError>;

#[derive(Debug, Error)]
pub enum HdmError {
    #[error("vector is not tangent at the base point (|v.x| = {dot:e})")]
    InvalidTangent { dot: f64 },

    #[error("vector is not of unit length (norm = {norm})")]
    NotUnit { norm: f64 },

    #[error("parallel transport between coincident or antipodal points is undefined")]
    DegenerateTransport,

    #[error("frame estimation at point {index} failed: {usable} usable neighbours, need {needed}")]
    FrameEstimation { index: usize, usable: usize, needed: usize },

    #[error("all singular values vanish at point {index}")]
    ZeroSingularValues { index: usize },

    #[error("ambiguous Procrustes alignment: smallest singular value {smallest:e}")]
    AmbiguousAlignment { smallest: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("kernel entries inside diagonal block {fibre} are not evaluated")]
    DiagonalBlock { fibre: usize },

    #[error("no transport estimate for base edge ({from}, {to})")]
    MissingTransport { from: usize, to: usize },

    #[error("row {row} has zero degree (isolated vertex)")]
    IsolatedVertex { row: usize },

    #[error("base graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("matrix invariant violated: {0}")]
    MatrixInvariant(String),

    #[error("eigensolver did not converge: {converged}/{requested} pairs, best pending residual {best_residual:e}")]
    SolverNonConvergence {
        converged: usize,
        requested: usize,
        best_residual: f64,
    },

    #[error("random-walk Laplacian is not symmetric; use the symmetric variant for eigensolves")]
    NonSymmetricOperator,

    #[error("Laplacian eigenvalue {value} exceeds 1; diffusion weights would be negative")]
    EigenvalueAboveOne { value: f64 },

    #[error("normalized cluster ratios need at least one non-zero cluster")]
    InsufficientClusters,

    #[error("embedding row {point} has zero norm")]
    ZeroRow { point: usize },

    #[error("fibre {fibre} has no samples")]
    EmptyFibre { fibre: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("quadrature grid under-resolves the {which} bandwidth: {nodes:.2} nodes across, need {required}")]
    UnderResolved {
        which: &'static str,
        nodes: f64,
        required: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {context} at line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
