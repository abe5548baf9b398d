//! Crate-wide error type.
//!
//! Everything fallible in the crate returns [`enum@Error`]; the variants keep
//! enough context (line numbers, vertex ids, step indices) that a caller can
//! report a useful message without re-deriving it.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mesh file could not be parsed.
    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    /// Mesh connectivity or geometry is invalid (non-conforming edge,
    /// inverted or degenerate triangle, out-of-range index, ...).
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    /// A caller violated an operation's contract (mismatched mesh/vector
    /// sizes, wrong degree-of-freedom space, point outside an element, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Configuration values outside the supported range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A vertex block of the lumped mass matrix is numerically singular.
    #[error(
        "singular mass block at vertex {vertex}: smallest eigenvalue estimate {pivot:.3e} \
         (degenerate element geometry or non-positive material weight)"
    )]
    SingularBlock { vertex: usize, pivot: f64 },

    /// Power iteration for the time-step limit failed to settle.
    #[error("power iteration did not converge: relative residual {residual:.3e} after {iters} iterations")]
    PowerIteration { residual: f64, iters: usize },

    /// The leapfrog recursion produced a non-finite field.
    #[error("time stepping diverged at step {step} (t = {time:.6}): {what}")]
    Diverged { step: usize, time: f64, what: String },

    /// Requested snapshot or probe time is outside the recorded range.
    #[error("no recorded state near t = {t}: {msg}")]
    SnapshotLookup { t: f64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
