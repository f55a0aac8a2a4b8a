//! Duplicate detection for individual case safety reports.

pub mod dates;
pub mod embedding;
pub mod engine;
pub mod eval;
pub mod error;
pub mod external;
pub mod features;
pub mod frequency;
pub mod hitmiss;
pub mod report;
pub mod review;
pub mod svm;
pub mod synth;
pub mod workflow;

pub use error::{Error, Result};
