//! Style-aware point-cloud auto-encoding and generation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a small reverse-mode autodiff engine with double-backward
//!   support for the critic's gradient penalty.
//! - [`geomdist`]: Chamfer and earth mover's distances (auction and Hungarian).
//! - [`genmetrics`]: set-level generation metrics (JSD, MMD, COV, 1-NNA).
//! - [`model`]: encoder, style-aware decoder, mapping network, discriminator.
//! - [`training`]: Adam, both training stages, checkpoints.
//! - [`data`]: cloud I/O, normalization, splits, synthetic shape families.
//! - [`config`]: flat key-value run configuration with `desk`/`paper` profiles.
//! - [`pipeline`]: loading, reconstruction, interpolation and generation helpers.

pub mod config;
pub mod data;
pub mod genmetrics;
pub mod geomdist;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;
