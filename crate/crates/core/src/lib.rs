//! PAC learning and adversarial regret minimization for contextual
//! combinatorial semi-bandits with sparse rewards over finite policy classes.
//!
//! - [`domain`]: actions, rewards, policies, simplex weights, sampling.
//! - [`environments`]: finite-support instances, generators, exact oracles.
//! - [`oracle`]: ERM and the linear-optimization oracle.
//! - [`objective`]: the log-barrier objective and Frank-Wolfe.
//! - [`pac`]: the two-phase PAC learner and its single-label variant.
//! - [`regret`]: log-barrier FTRL (EXP4-style) and the entropy baseline.
//! - [`harness`]: experiment configs, sweeps and CSV/JSON output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod environments;
pub mod error;
pub mod harness;
pub mod objective;
pub mod oracle;
pub mod pac;
pub mod regret;

pub use domain::{
    ActionSubset, Context, Policy, PolicyClass, RewardVector, SeededRng, SemiBanditFeedback, SimplexWeights,
};
pub use environments::Instance;
pub use error::{Error, Result};
