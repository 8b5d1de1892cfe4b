//! Sparse attribution of concept shift between a source and a target
//! tabular dataset.
//!
//! A base model trained on the source domain supplies link-scale offsets.
//! The change in `P(y | X)` on the target is modelled as a sparse additive
//! correction on a fixed basis and estimated with L1-penalized GLM paths,
//! optionally with shared absorption terms for base-model misspecification
//! and with Model-X knockoffs for false discovery control.

pub mod bench;
pub mod data;
pub mod evaluate;
pub mod error;
pub mod glm;
pub mod knockoff;
pub mod methods;
pub mod simulate;
pub mod solver;

pub use error::{Error, ErrorClass, Result};
