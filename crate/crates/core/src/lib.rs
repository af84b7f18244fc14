//! Adaptive-eigenspace image segmentation and denoising.
//!
//! An image `I` defines the diffusivity `μ = γ / (1 + γ|∇I|²)²`, which is
//! nearly zero across edges. The low eigenfunctions of `-∇·(μ∇·)` with
//! Dirichlet conditions then localize on the objects of the image, so
//! thresholding them segments those objects, and truncating the expansion
//! `I = I₀ + Σ βₘ φₘ` removes noise while keeping edges.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod field;
pub mod operator;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod weight;

pub use error::{Error, Result};
