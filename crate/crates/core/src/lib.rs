//! Two-sample testing for high-dimensional models.
//!
//! Given samples from two populations `U` and `V`, the library tests whether
//! both populations share the same model parameters (`H0: phi_u = phi_v`).
//! The workflow is screen-then-test:
//!
//! 1. split each population into an in-half and an out-half;
//! 2. on the in-halves, run l1-penalized estimation (lasso / graphical lasso,
//!    lambda by cross-validation) three times — on `U`, on `V`, and on the
//!    pooled rows — yielding active sets `I_u`, `I_v`, `I_uv`;
//! 3. on the out-halves, evaluate the restricted likelihood-ratio statistic
//!    between the individual-supports model and the pooled-support model;
//! 4. compute a p-value from the estimated weighted-chi-square null
//!    distribution (the two models are non-nested, so the classical
//!    chi-square null does not apply);
//! 5. repeat over many random splits and aggregate the p-values.
//!
//! Two model families are provided: linear regression ("differential
//! regression", [`models::Regression`]) and zero-mean Gaussian graphical
//! models ("differential network", [`models::Ggm`]). A permutation baseline
//! ([`permtest`]) and simulation harness ([`simulate`]) round out the crate.

pub mod data;
pub mod error;
pub mod linalg;
pub mod models;
pub mod nulldist;
pub mod permtest;
pub mod rng;
pub mod screening;
pub mod simulate;
pub mod testing;

pub use data::Dataset;
pub use error::{Error, Result};
pub use models::{Ggm, Model, Regression};
pub use screening::{ActiveSets, ScreeningConfig};
pub use testing::{multi_split_test, BEstimator, TestConfig, TestReport};
