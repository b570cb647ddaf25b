//! Probabilistic bimodal contrastive learning: tilted models of a joint
//! distribution, the losses that fit them, closed-form Gaussian minimizers,
//! trainable encoders and the downstream retrieval and classification tasks.

pub mod crossmodal;
pub mod datagen;
pub mod encoders;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod training;

pub use error::{Error, Result};
