//! Self-supervised image reconstruction through a canonical patch
//! auto-encoder.
//!
//! A single corrupted observation is fit by jointly optimizing a clean
//! image estimate and a small patch auto-encoder. Patches are first mapped
//! to canonical representatives of their rotation-flip orbit, so the
//! auto-encoder learns one manifold for all eight orientations of a local
//! pattern. The known linear degradation (mask, blur, decimation, or
//! identity) closes the loop between the estimate and the observation.
//!
//! Entry points: [`task::run_task`] drives a whole reconstruction from a
//! [`config::TaskConfig`]; the pieces (patch operators, action group,
//! auto-encoder, observation models, solver) are usable on their own.

pub mod action;
pub mod canon;
pub mod config;
pub mod error;
pub mod image;
pub mod metrics;
pub mod mlp;
pub mod noise;
pub mod observe;
pub mod patch;
pub mod recon;
pub mod task;

pub use error::{Error, Result};
pub use image::Image;
