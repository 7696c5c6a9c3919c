//! Reduced-variable optimization.
//!
//! Multi-parameter models `f(P, t, k)` are fitted by searching over the
//! single controlling variable `k` only. Every other parameter is carried
//! along an implicit path `P(k)`:
//!
//! * [`reduce_ia`] averages the exact inversions of the model on every
//!   `N_p`-point subset of the data (approximate, cheap, needs only C¹ models);
//! * [`reduce_ib`] solves the inner least-squares stationarity system at each
//!   `k`, so the one-dimensional optimum coincides with the full
//!   unconstrained least-squares minimum;
//! * [`optimize_ii`] follows the stationary path of an arbitrary cost
//!   function along one coordinate and enumerates its stationary points.
//!
//! [`kinetics`] provides the first- and second-order rate-law models and
//! [`oracle`] an independent full least-squares fit used for cross-checks.

pub mod error;
pub mod kinetics;
pub mod model;
pub mod numerics;
pub mod optimize_ii;
pub mod oracle;
pub mod path;
pub mod reduce_ia;
pub mod reduce_ib;
pub mod report;

pub use error::{Error, Result};
pub use model::{DataPoint, Dataset, FnModel, Model, ParameterVector, SubsetSolution};
pub use numerics::{Bracket1D, RootStart, SolverConfig, SquareMatrix};
pub use path::{PathPoint, PathSource, ReducedPath};
pub use report::{FitReport, Method, ResidualRow};
