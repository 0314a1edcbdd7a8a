//! Self-supervised localization of foreign object debris on pavement
//! imagery: an autoencoder trained on clean patches reconstructs debris
//! poorly, and the thresholded reconstruction difference marks it.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod model;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
