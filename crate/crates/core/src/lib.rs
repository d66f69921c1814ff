//! Multi-transmitter localization for molecular communication via diffusion.
//!
//! The crate is organized along the processing chain:
//!
//! - [`channel`]: closed-form first-hit probability and distance inversion.
//! - [`sim`]: Brownian particle simulator with an absorbing spherical receiver.
//! - [`clustering`]: K-means, GMM and robust centroid corrections.
//! - [`nn`]: residual networks refining K-means directions and sizes.
//! - [`eval`]: matching, error metrics and report generation.
//! - [`dataset`] / [`config`]: on-disk formats and run configuration.

pub mod channel;
pub mod error;
pub mod geometry;
pub mod rng;
pub mod sim;
pub mod clustering;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod nn;

pub use error::{Error, Result};
pub use geometry::{Mat3, Vec3};
