//! Invariant-consistency learning for unsupervised domain adaptation.
//!
//! Trains a classifier head `f` that is simultaneously consistent with
//! source-domain labels and target-domain clusters (discovered online by a
//! second head `g`), under a variance penalty that keeps the two pairwise
//! consistency losses balanced. Everything runs on dense `f64` arrays with a
//! small reverse-mode tape, on seeded synthetic spurious-correlation data.

pub mod autodiff;
pub mod clustering;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
