//! Multi-method fusion (MMF) quality gating for image-to-image translation.
//!
//! The library scores source/translated image pairs with a battery of
//! full-reference IQA metrics, trains a gradient-boosted ensemble to predict
//! the DISTS distance the translation would have to its (unavailable) ground
//! truth, and gates translations by thresholding that prediction.

pub mod error;
pub mod imgio;

pub mod synthgen;
pub mod vismaps;

pub use error::{Error, Result};

pub mod automl;
pub mod bench;
pub mod cli;
pub mod deepsim;
pub mod features;
pub mod gbdt;
pub mod metrics;
