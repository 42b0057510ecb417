//! Out-of-distribution behaviour of single-layer linear attention trained for
//! in-context linear regression on low-rank task subspaces.
//!
//! * [`geometry`]: orthonormal frames, principal angles, covariance models.
//! * [`attention`]: the predictor, optimal weights and LoRA adapters.
//! * [`risk`]: exact and asymptotic test risks and prompt-length thresholds.
//! * [`montecarlo`]: simulation of the same quantities.
//! * [`lora`]: gradient-descent fine-tuning of adapters.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod lora;
pub mod montecarlo;
pub mod par;
pub mod risk;

pub use error::{Error, Result};
pub use par::Execution;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
