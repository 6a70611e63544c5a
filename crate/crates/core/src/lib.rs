//! A parallel-pathway group-convolution solver for visual analogy matrices,
//! with a procedural matrix generator and training harness.
//!
//! - [`tensor`]: dense tensors with reverse-mode differentiation
//! - [`layers`]: convolutions, pooling, normalization, group and group-pair convolution
//! - [`model`]: panel encoder, reasoner, prediction heads and the joint loss
//! - [`data`]: rule grammar, rasterizer, regime splits and the dataset format
//! - [`train`]: Adam, plateau schedule, early stopping and evaluation metrics

pub mod data;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod manifest;
pub mod model;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
