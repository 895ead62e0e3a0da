//! Token-prompt embedding space optimization (TPSO) at desk scale.
//!
//! Learnable offsets on token embeddings are optimized so that each variant
//! prompt embedding stays inside a cosine tolerance band around the original
//! prompt while the variants are pushed apart from one another. The variants
//! then drive a classifier-free-guidance sampler through a progressive
//! embedding schedule, and the resulting features are scored with a suite of
//! generative-diversity metrics.
//!
//! Layout:
//!
//! - [`adengine`]: dense tensors and a recorded reverse-mode tape.
//! - [`encoder`]: seeded token encoder, transformer prompt encoder, projector.
//! - [`tpso`]: offsets, losses, Adam, and the optimization loop.
//! - [`scheduler`]: per-timestep blend weight and conditioning blend.
//! - [`sampler`]: toy denoiser, guidance, deterministic trajectories.
//! - [`metrics`]: MSS, Vendi, Fréchet, k-NN precision/recall, alignment.
//! - [`cli`]: configuration, commands, reports and file formats.

pub mod adengine;
pub mod cli;
pub mod encoder;
mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod scheduler;
pub mod tpso;

pub use error::{Error, Result};
