//! Matrix and load assembly for the edge-element discretisation.
//!
//! Two matrix shapes appear: the corner-quadrature mass matrix is block
//! diagonal over vertex-anchored dof groups ([`blockdiag`]), while the
//! curl-curl stiffness matrix and all algebraically derived operators live in
//! compressed sparse rows ([`sparse`]).  [`forms`] contains the quadrature
//! loops that fill them.

pub mod blockdiag;
pub mod forms;
pub mod sparse;

pub use blockdiag::{BlockCholesky, BlockDiagMatrix, BlockLayout};
pub use forms::{
    assemble_boundary_load, assemble_lumped_mass, assemble_stiffness, assemble_volume_load,
};
pub use sparse::{SparseBuilder, SparseMatrix};
