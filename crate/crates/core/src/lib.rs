//! Robust estimation of discretely observed multivariate diffusions with
//! affine drift by minimum density power divergence.
//!
//! The crate covers simulation ([`sim`]), the contrast and its gradient
//! ([`objective`]), the fit ([`estimator`]), closed-form asymptotic
//! quantities ([`inference`]) and the Monte Carlo study harness
//! ([`experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod experiment;
pub mod inference;
pub mod json;
pub mod linalg;
pub mod objective;
pub mod optim;
pub mod sim;

pub use error::{Error, Result};
pub use estimator::{fit, ols_init, FitResult, Init, MdpdeConfig};
pub use linalg::{SpdMatrix, SymMatrix, VechVector};
pub use objective::{DiffusionParams, ObjectiveValue};
pub use sim::{ContaminationSpec, DriftAffine, SamplePath};
