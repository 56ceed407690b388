//! Distributionally robust policy evaluation and control over finite MDPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: nominal model, policies, trajectory sampling and stationary
//!   distributions of the induced state-action chain.
//! - [`uncertainty`]: dual objectives, supergradients, single-sample
//!   estimators and exact inner-problem solvers for total-variation and
//!   Wasserstein-ℓ balls.
//! - [`linear_fa`]: primal/dual feature maps, clipping, weighted projection
//!   and the dual parameter ball.
//! - [`learners`]: the two-time-scale robust TD and robust Q-learning loops
//!   with a frozen target parameter.
//! - [`oracle`]: tabular ground truth through exact robust Bellman
//!   operators.

pub mod learners;
pub mod linalg;
pub mod linear_fa;
pub mod mdp;
pub mod oracle;
pub mod rng;
pub mod uncertainty;

pub use learners::{nominal_td, robust_q, robust_td, LearnerConfig, LearnerError, LearnerOutput, RunTrace};
pub use linear_fa::{FeatureKind, FeatureMap};
pub use mdp::{random_mdp, Mdp, MdpError, Policy, StationaryDistribution, TrajectoryCursor};
pub use oracle::{solve_optimal, solve_policy, OracleError, OracleSolution};
pub use uncertainty::{UncertaintySet, WassersteinBall};
