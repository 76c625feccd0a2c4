//! Command-line surface and evaluation tooling for the CCA image codec.

pub mod ablation;
pub mod eval;
