//! Clique-structured trajectory optimization with Gauss-Newton Hessians.
//!
//! Motion problems are modeled as objectives over *cliques* — short windows
//! of consecutive trajectory configurations — whose terms are functions of
//! finite-differenced time derivatives of task maps. Squared derivative
//! norms through any differentiable task space get cheap, accurate curvature
//! from the Gauss-Newton Hessian: as the time discretization shrinks, the
//! true Hessian converges to it at a rate governed by the derivative order.
//! The library exploits that structure in three ways:
//!
//! - rigid-body kinetic energy is expressed as a squared task-space velocity
//!   through a per-body inertial map built only from kinematic Jacobians;
//! - velocity terms defined by an arbitrary Riemannian metric are handled
//!   through Cholesky factors of the metric when no explicit task map is
//!   available;
//! - constrained problems are solved by an augmented Lagrangian loop over a
//!   Gauss-Newton inner loop with block-banded linear solves.
//!
//! See the crate `examples/` directory for one runnable example per
//! capability, and the `cliqueopt` binary for the experiment harness.

pub mod banded;
pub mod cholesky_metric;
pub mod error;
pub mod experiment;
pub mod kinematics;
pub mod models;
pub mod objective;
pub mod optimizer;
pub mod traj;

pub use banded::{scatter_clique_gradient, scatter_clique_hessian, BandedCholesky, BlockBandedMatrix};
pub use error::{Error, Result};
pub use traj::{extract_clique, make_fd_operator, CliqueIndexing, FiniteDiffOperator, Trajectory};
