//! Global-score precision bounds on finite parameter grids.
//!
//! The crate computes the three levels of the global-score hierarchy
//! (global Cramér–Rao, global Barankin and fully global) for classical
//! models with finitely many outcomes and for quantum state families,
//! builds the parameter-independent optimal measurement when the family is
//! compatible, and evaluates a kernel-smoothed Bayesian bound for a noisy
//! qubit.
//!
//! ```
//! use global_score::classical::{bound_fg, bound_gcr, local_scores};
//! use global_score::estimators::mle;
//! use global_score::repetition::BinaryModel;
//!
//! let pi = std::f64::consts::PI;
//! let model = BinaryModel::sine(0.5, vec![0.0, pi / 2.0], vec![0.5, 0.5]).unwrap().to_discrete();
//! let g = local_scores(&model);
//! let est = mle(&model).to_estimator();
//! let fg = bound_fg(&model, &g, &est).unwrap();
//! let gcr = bound_gcr(&model, &g, &est).unwrap();
//! assert!((fg - gcr).abs() < 1e-12 && (fg - 0.539744).abs() < 1e-6);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix formulas.
#![allow(clippy::needless_range_loop)]

pub mod bayesian;
pub mod classical;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod quantum;
pub mod repetition;

pub use error::{Error, Result};
