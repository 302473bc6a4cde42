//! Certified-randomness rate engine for Bell-test based randomness
//! expansion: Bell scenarios, entropy curves, the finite-size accounting,
//! a protocol simulator, a Toeplitz extractor and CSV report generation.

pub mod bell;
pub mod bits;
pub mod curves;
pub mod eat;
pub mod error;
pub mod extractor;
pub mod report;
pub mod sim;
pub mod tables;

pub use error::{Error, Result};
