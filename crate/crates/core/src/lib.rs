//! Target-aware multi-modality image translation.
//!
//! One generator translates an image of any source modality into any target
//! modality while a second stream, sharing the generator's middle block,
//! translates only the labelled target area. A crossing loss ties the two
//! streams together. The crate also ships a phantom corpus with known
//! cross-modality ground truth, the training loop and evaluation metrics.

pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod networks;
pub mod training;
mod tensorfile;

pub use error::{Error, Result};
