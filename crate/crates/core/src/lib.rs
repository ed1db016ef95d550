//! Numerical continuation of localized steady states of bistable lattice equations
//! `d Δu + f(u, mu) = 0` on the square lattice.

pub mod asymmetric;
pub mod asymptotics;
pub mod codim2;
pub mod continuation;
pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod snake;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use lattice::{Field, GridKind, GridSpec, Site, Symmetry};
pub use model::{Family, Nonlinearity, PatternId, Variant};
pub use continuation::{Branch, BranchPoint, Direction, FoldPoint, Parameter, StepConfig};
pub use solver::{NewtonOptions, Problem};
pub use spectral::IsotypicTag;
