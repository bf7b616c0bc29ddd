//! Design-based estimation of the average treatment effect in randomized
//! experiments with leave-one-out potential outcome imputation.
//!
//! For each unit, both potential outcomes are imputed from the *other*
//! units (arm means, strata, least squares, or a random forest with an
//! out-of-bag shortcut), blended into m_hat_i = (1-p_i) t_hat_i + p_i c_hat_i,
//! and turned into an unbiased per-unit effect estimate
//! (Y_i - m_hat_i) U_i with the signed inverse probability weight U_i.
//! Averaging over units gives an exactly unbiased estimate of the average
//! effect; its variance is estimated from leave-one-out cross-validated
//! prediction errors.
//!
//! Dependent designs (fixed treated counts, blocks, pairs) are handled by
//! the random-drop procedure in [`designs`]; exact ground truth for small
//! instances comes from the enumeration oracle in [`oracle`]; the Monte
//! Carlo harness and data generators live in [`sim`].

pub mod designs;
mod error;
pub mod estimator;
mod experiment;
pub mod forest;
pub mod imputers;
mod linalg;
pub mod oracle;
mod rng;
pub mod sim;
mod sums;
pub mod variance;

// Callers build covariate matrices with the same ndarray the crate uses.
pub use ndarray;

pub use error::{Error, Result};
pub use estimator::{
    combine_m, loop_estimate, loop_tau_units, signed_weight, simple_difference, unit_effect,
    EstimateOptions,
};
pub use experiment::{Caveat, DesignDescriptor, EstimateReport, Experiment, ImputedOutcomes};
pub use rng::{derive_seed, stream};
