//! Vertical federated learning simulation and adversarial dominating input
//! (ADI) assessment.
//!
//! Participants hold disjoint feature columns of the same samples and a
//! coordinator combines their local outputs. The crate trains HeteroLR and
//! SplitNN systems, synthesizes ADIs by gradient methods, searches for them
//! with a saliency-guided greybox fuzzer, and checks the analytic output
//! variance formulas against Monte-Carlo estimates.

pub mod assessment;
pub mod config;
pub mod data;
pub mod error;
pub mod fuzz;
pub mod matrix;
pub mod model;
pub mod protocol;
pub mod synthesis;
pub mod variance;

pub use error::{Error, Result};
pub use matrix::Matrix;
