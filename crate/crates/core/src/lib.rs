//! Model-free learning of distributed (subspace-constrained) output-feedback
//! controllers for finite-horizon linear-quadratic problems.
//!
//! The crate is organised bottom-up:
//!
//! * [`system`]: the time-varying plant, its lifted block operators and
//!   noisy closed-loop rollouts.
//! * [`policy_space`]: causal sparsity patterns, orthonormal subspace bases,
//!   the quadratic-invariance test and the `H` / `h` change of variables.
//! * [`cost`]: closed-form expected cost in the `K` and `Q` parameterisations.
//! * [`oracle`]: model-based ground truth for QI problems and sampled
//!   estimates of the gradient-dominance and smoothness constants.
//! * [`learner`]: the one-point zeroth-order learner and its iteration
//!   schedule.
//! * [`experiment`] / [`config`]: the batch driver behind the `distlq` CLI.

pub mod config;
pub mod cost;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod learner;
mod linalg;
pub mod oracle;
pub mod policy_space;
pub mod system;

pub use cost::{CostContext, CostTerms};
pub use error::{Error, Result};
pub use learner::{LearnerConfig, RunLog, Schedule, ScheduleConstants};
pub use oracle::{GdEstimate, OracleSolution, QuadraticForm, SmoothnessConstants, Sublevel};
pub use policy_space::{PolicyMatrix, QiReport, SparsityPattern, SubspaceBasis};
pub use system::{BlockOperators, Dims, NoiseModel, NoiseRealization, SystemSpec, Trajectory};
