//! Simulation and exact computation for regenerative composition structures
//! driven by subordinators: truncated path simulation, gap/composition
//! extraction, closed-form and quadrature Laplace exponents, exact part-count
//! laws, and the statistical experiments wired to the `regenlab` binary.

pub mod composition;
pub mod diffeo;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod levy;
pub mod pathsim;
pub mod quad;
pub mod rng;
pub mod slowvar;

pub use composition::{Composition, GapSet, Residual};
pub use diffeo::Diffeomorphism;
pub use error::{Error, Result};
pub use levy::LevyModel;
pub use pathsim::{simulate_path, StopRule, SubordinatorPath};
pub use slowvar::SlowlyVarying;
