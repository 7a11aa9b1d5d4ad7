//! Training framework for long-tailed sequential next-item prediction.
//!
//! The crate is organized around a small dense-tensor autodiff engine
//! ([`autodiff`]) on top of which two pluggable sequence encoders
//! ([`encoders`]), the prediction and discriminator losses ([`objectives`]),
//! and the inner/outer alignment training loop ([`trainer`]) are built.
//! [`dataio`] handles ingestion, preprocessing, splitting, and synthetic
//! corpus generation; [`evalkit`] computes cohort-sliced ranking metrics.

pub mod autodiff;
pub mod dataio;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod objectives;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
