//! Simulation, feature extraction and classical localization for outdoor
//! wireless acoustic sensor networks.
//!
//! The pipeline runs in stages that each consume files written by the
//! previous one:
//!
//! 1. [`scene`] samples node layouts and source events on a 1 m grid.
//! 2. [`propagate`] renders every source to every microphone with exact
//!    time of flight, spherical divergence and atmospheric absorption.
//! 3. [`soundmap`] and [`dsp`] extract per-node SRP-PHAT soundmaps and
//!    gammatone spectrograms.
//! 4. [`localize`] turns soundmaps into bearings and triangulates them.
//! 5. [`metrics`] scores classification and localization output.
//!
//! [`netsim`] emulates the node-to-collector feature stream over TCP.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod localize;
pub mod metrics;
pub mod netsim;
pub mod pipeline;
pub mod propagate;
pub mod scene;
pub mod signals;
pub mod soundmap;

pub use error::{Error, Result};
pub use geometry::Point2;

/// Sampling rate used throughout the network, in Hz.
pub const SAMPLE_RATE: u32 = 8000;
/// Speed of sound at 20 °C, in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;
