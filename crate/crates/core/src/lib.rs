//! Ultrasound computed tomography with an exact Helmholtz forward model.
//!
//! The crate covers the full classical pipeline:
//!
//! * [`grid`] and [`container`]: uniform 2D fields and their binary file format;
//! * [`phantom`]: synthetic sound-speed media;
//! * [`geometry`]: transducer rings, sources, receivers and noise;
//! * [`cbs`]: the convergent Born series solver and its batched form;
//! * [`adjoint`]: misfit, adjoint fields and the sound-speed gradient;
//! * [`inversion`] and [`metrics`]: gradient descent / L-BFGS reconstruction
//!   and image-quality scores;
//! * [`oracle`]: brute-force references used for verification;
//! * [`experiment`]: JSON experiment configs and file sidecars.

pub mod adjoint;
pub mod cbs;
pub mod container;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod geometry;
pub mod grid;
pub mod inversion;
pub mod metrics;
pub mod oracle;
pub mod phantom;

pub use error::{Error, Result};
