//! In-context meta-learning of voxelwise encoding models.
//!
//! A permutation-invariant transformer reads a support set of
//! `(stimulus embedding, voxel response)` pairs and emits the weight vector of a
//! linear encoder for that voxel. The crate covers the whole pipeline around
//! that hypernetwork:
//!
//! * [`data`]: the VXED dataset container, voxel quality filtering, task
//!   sampling and synthetic task generation.
//! * [`model`]: the hypernetwork itself with hand-written reverse-mode gradients.
//! * [`train`]: AdamW, reduce-on-plateau scheduling, the three-stage curriculum
//!   and the VXCK checkpoint format.
//! * [`baselines`]: OLS, cross-validated ridge and a gradient-trained reference.
//! * [`eval`]: metrics, context-scaling curves, attention attribution, prompt
//!   classification and weight export.
//! * [`cli`]: the `incorl` command-line front end.

pub mod baselines;
pub mod cli;
mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
