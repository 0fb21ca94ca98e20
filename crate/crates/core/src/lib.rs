//! Fine-grained image classification with a global-context vision transformer.
//!
//! The crate covers the whole pipeline on the CPU: dataset ingestion and
//! augmentation ([`data`]), the model with hand-written backward passes
//! ([`model`]), the training loop ([`train`]), metrics and report export
//! ([`eval`]), finite-difference verification ([`gradcheck`]) and the `gcvit`
//! command line ([`cli`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod model;
pub mod rng;
pub mod train;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use image::{ImageTensor, RangeTag};
