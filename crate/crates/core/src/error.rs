// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, GloceError>;

#[derive(Debug, thiserror::Error)]
pub enum GloceError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed embedding dump: {0}")]
    MalformedDump(String),

    #[error("malformed module file: {0}")]
    MalformedModule(String),

    #[error("malformed module bank: {0}")]
    MalformedBank(String),

    #[error("invalid embedding set: {0}")]
    InvalidEmbeddingSet(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("empty anchor pool")]
    EmptyPool,

    #[error("zero-norm vector for `{0}`")]
    ZeroNorm(String),

    #[error("requested {requested} items from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("accumulator holds no samples")]
    EmptyAccumulator,

    #[error("eigendecomposition did not converge")]
    EigenNonConvergence,

    #[error("covariance is not positive semidefinite (eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("constraint lies outside the covariance range (residual {0:e})")]
    InfeasibleConstraint(f64),

    #[error("degenerate gate: residual second moment about the surrogate mean is zero")]
    DegenerateGate,

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("no anchor passes supplied for gate calibration")]
    NoAnchorPasses,

    #[error("empty pass")]
    EmptyPass,

    #[error("module bank is empty")]
    EmptyBank,

    #[error("duplicate module label `{0}` in bank")]
    DuplicateLabel(String),

    #[error("not enough samples: need at least {need}, got {got}")]
    NotEnoughSamples { need: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0} verification instance(s) failed")]
    VerificationFailed(usize),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GloceError>,
    },
}

impl GloceError {
    /// Stable machine-readable name of the innermost error.
    pub fn name(&self) -> &'static str {
        match self {
            GloceError::Io(_) => "Io",
            GloceError::MalformedDump(_) => "MalformedDump",
            GloceError::MalformedModule(_) => "MalformedModule",
            GloceError::MalformedBank(_) => "MalformedBank",
            GloceError::InvalidEmbeddingSet(_) => "InvalidEmbeddingSet",
            GloceError::DimensionMismatch { .. } => "DimensionMismatch",
            GloceError::RankOutOfRange { .. } => "RankOutOfRange",
            GloceError::EmptyPool => "EmptyPool",
            GloceError::ZeroNorm(_) => "ZeroNorm",
            GloceError::PoolTooSmall { .. } => "PoolTooSmall",
            GloceError::EmptyAccumulator => "EmptyAccumulator",
            GloceError::EigenNonConvergence => "EigenNonConvergence",
            GloceError::NotPositiveSemidefinite(_) => "NotPositiveSemidefinite",
            GloceError::InfeasibleConstraint(_) => "InfeasibleConstraint",
            GloceError::DegenerateGate => "DegenerateGate",
            GloceError::DegenerateStats(_) => "DegenerateStats",
            GloceError::NoAnchorPasses => "NoAnchorPasses",
            GloceError::EmptyPass => "EmptyPass",
            GloceError::EmptyBank => "EmptyBank",
            GloceError::DuplicateLabel(_) => "DuplicateLabel",
            GloceError::NotEnoughSamples { .. } => "NotEnoughSamples",
            GloceError::InvalidConfig(_) => "InvalidConfig",
            GloceError::VerificationFailed(_) => "VerificationFailed",
            GloceError::Stage { source, .. } => source.name(),
        }
    }

    /// Strips any stage context.
    pub fn root(&self) -> &GloceError {
        match self {
            GloceError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> GloceError {
        GloceError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(GloceError::DimensionMismatch { expected, got });
    }
    Ok(())
}
