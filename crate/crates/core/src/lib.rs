//! Adaptive finite elements for the Stokes problem driven by point forces.
//!
//! The velocity of a Stokes flow forced by `F delta_z` is not in `H^1`, but
//! it is in the weighted space with weight `|x - z|^alpha` for
//! `0 < alpha < 2`. This crate discretizes the problem with inf-sup stable
//! (Taylor–Hood, mini) or stabilized low-order (P1/P0, P1/P1) pairs, computes
//! residual error indicators measured in that weighted norm, and refines the
//! mesh adaptively with longest-edge bisection.
//!
//! ```
//! use stokes_afem::{run_afem, RunConfig};
//!
//! let config = RunConfig::from_toml(r#"
//!     domain = "unit-square"
//!     scheme = "taylor-hood"
//!     alpha = 1.5
//!     sources = ["0.5 0.5 1 1"]
//!     max-iters = 4
//! "#)?;
//! let table = run_afem(&config)?;
//! assert_eq!(table.rows.len(), 4);
//! # Ok::<(), stokes_afem::AfemError>(())
//! ```

pub mod assembly;
pub mod driver;
pub mod elements;
pub mod error;
pub mod estimator;
pub mod exact;
pub mod field;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use assembly::{apply_dirichlet, assemble, delta_load, ConstrainedSystem, PointSource, SaddleSystem};
pub use driver::{mark, run_afem, run_afem_detailed, ConvergenceTable, IterationRecord, RunConfig, RunOutcome};
pub use elements::{DofMap, Family, SchemeSpec, StabParams};
pub use error::{AfemError, Result};
pub use estimator::{estimate, global_estimator, IndicatorField};
pub use exact::{stokeslet, weighted_error, StokesletSpec, WeightedError};
pub use field::DiscreteField;
pub use mesh::{DomainKind, DomainSpec, Mesh, Point, Vector};
pub use quadrature::WeightSpec;
pub use solver::{solve_saddle, Solution};

// The guide's code blocks run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/weights.md")]
    mod weights {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/exact.md")]
    mod exact {}
    #[doc = include_str!("../../../book/src/adaptive-loop.md")]
    mod adaptive_loop {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
