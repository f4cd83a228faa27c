//! Lambda-Omega lattice dynamical systems on truncated square grids.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lattice;
pub mod model;
pub mod norms;
pub mod ode;
pub mod linear_ops;
pub mod steady;

pub use error::{Error, Result};
pub use lattice::{Boundary, ComplexField, LatticeGrid, PolarField, Site};
pub use model::{LambdaSpec, ModelParams, OmegaSpec};
pub use norms::NormOrder;
pub use steady::{Family, SteadyState};
