//! Spatial discretization on the unit interval and the unit square.
//!
//! Homogeneous Dirichlet conditions are imposed by elimination: only interior
//! nodes carry unknowns, and every assembled matrix acts on that interior set.

mod assembly;
mod mesh;
mod solve;
mod sparse;

pub use assembly::{assemble, assemble_fd, assemble_fem, Backend, OperatorPair};
pub use mesh::Mesh;
pub use solve::{solve_spd, solve_spd_with, BandedLu, SkylineCholesky, SpdBackend, CHOLESKY_MAX_ROWS};
pub use sparse::CsrMatrix;
