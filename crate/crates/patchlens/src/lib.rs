//! Simulation and reconstruction toolkit for lensless imaging with
//! spatially varying point spread functions and finite-sensor truncation.
//!
//! The measurement model partitions the scene into patches, convolves each
//! patch with its locally valid PSF, superposes the contributions, and crops
//! the result to the sensor's sampling window. Reconstruction inverts this
//! with per-patch frequency-domain kernels applied to the full measurement,
//! stitched with partition-of-unity overlap blending, and optionally refined
//! by a hierarchical local-to-global enhancement pass.

pub mod config;
pub mod deconv;
pub mod enhance;
mod error;
pub mod fft;
pub mod forward;
pub mod grid;
pub mod io;
pub mod layout;
pub mod metrics;
pub mod psf;
pub mod scenes;

pub use error::{Error, Result};
