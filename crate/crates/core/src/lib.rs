//! Learned image morphing between instances of one object class.
//!
//! Given two images and a trained model, the pipeline synthesizes a sequence
//! of in-between frames: a grid-based freeform-deformation spatial
//! transformer aligns the inputs, an encoder/decoder generator fuses their
//! features under time-blended instance statistics, and perceptual losses
//! pace the transition. Everything runs on a small reverse-mode autodiff
//! engine over dense CPU tensors, verifiable against finite differences.

pub mod archive;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod perceptual;
pub mod schedule;
pub mod tensor;
pub mod training;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{backward, no_grad, Adam, AdamParams, Dtype, Scalar, Tensor};
