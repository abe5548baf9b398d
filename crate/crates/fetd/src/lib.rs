//! Finite-element time-domain solver for the 2D Maxwell system
//!
//! ```text
//!     eps d_tt E + sigma d_t E + curl(nu curl E) = f      in Omega,
//!     n x (nu curl E) = g                                 on the boundary,
//! ```
//!
//! discretised with two tangential degrees of freedom per mesh edge and a
//! vertex-based quadrature that makes the mass matrix block diagonal (one
//! small block per mesh vertex).  Explicit leapfrog time stepping then costs
//! one sparse matrix-vector product per step.
//!
//! On edges where the coefficients are smooth the two degrees of freedom can
//! be merged into a single one without changing the computed solution; the
//! resulting scheme is a generalisation of the classical Yee finite-difference
//! method to unstructured meshes.  The [`reduction`] module builds the
//! corresponding prolongation/restriction operators and the reduced system,
//! and [`timestep`] advances either formulation.
//!
//! The [`bench`] module drives the bundled scattering experiment (a plane
//! wave hitting a conductive polygonal obstacle) and produces convergence
//! and time-step-limit tables.

pub mod assembly;
pub mod bench;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod reduction;
pub mod timestep;
pub mod vec2;

pub use error::{Error, Result};
