//! Attribute-conditioned face synthesis at desk scale.
//!
//! A small multi-head CNN learns to classify procedurally rendered faces by
//! attribute group. Per-attribute diagonal Gaussians fitted to one of its
//! layers turn a requested attribute set into target activations, and
//! feature inversion then searches for an image producing them.

pub mod cgmm;
pub mod data;
pub mod error;
pub mod generate;
pub mod io;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
