//! Element-level machinery: barycentric geometry, the two-per-edge tangential
//! basis, quadrature rules, degree-of-freedom bookkeeping, interpolation and
//! point evaluation.
//!
//! The discrete space attaches two basis functions to every mesh edge
//! `(i, j)` with `i < j`:
//!
//! ```text
//!     tail slot:   lambda_i * grad(lambda_j)
//!     head slot:  -lambda_j * grad(lambda_i)
//! ```
//!
//! Both have the same (constant) curl on each element and their sum has a
//! constant tangential trace along the edge, which is what makes merging the
//! two slots into a single unknown possible on edges with smooth data (see
//! [`crate::reduction`]).  Each slot's basis function vanishes at two of the
//! three vertices of every element containing it; evaluating products at the
//! vertices only (the lumped inner product) therefore couples slots anchored
//! at the same vertex and nothing else.

pub mod basis;
pub mod dofmap;
pub mod eval;
pub mod geometry;
pub mod interp;
pub mod quad;

pub use basis::{curl_basis, eval_basis, LocalDof};
pub use dofmap::{DofMap, DofVector, Space};
pub use geometry::ElementGeometry;
