//! Desk-scale disentangled 3D-aware generative model.
//!
//! The generator factors objects into a shared canonical density volume, a
//! per-instance 3-dimensional deformation field, and per-instance
//! appearance, rendered by volumetric integration and trained adversarially
//! from unposed images. An inverse deformation network provides dense
//! correspondences; an encoder plus iterative refinement embeds images back
//! into the model.
//!
//! Everything runs on a self-contained reverse-mode autodiff tensor core
//! ([`tensor`]) and is deterministic under a splittable [`rng::RngKey`].


pub mod camera;
pub mod discriminator;
pub mod error;
pub mod fields;
pub mod generator;
pub mod imgio;
pub mod integrate;
pub mod losses;
pub mod num;
pub mod params;
pub mod render;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;

pub use error::{D3dError, Result};
pub use params::{GradMap, ParamSet};
pub use rng::RngKey;
pub use tensor::Tensor;
