//! Corrected BDF convolution-quadrature time stepping for semilinear
//! subdiffusion problems `∂_t^α u - κΔu = f(u)` with homogeneous Dirichlet data.

pub mod bench;
pub mod cq;
pub mod discretize;
pub mod error;
pub mod problems;
pub mod special;
pub mod stepper;

pub use error::{Error, Result};
