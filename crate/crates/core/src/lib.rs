//! Chemical-state unmixing for TXM-XANES spectral image cubes.
//!
//! The observation model is `Y = A·X·diag(s) + R`: each pixel spectrum is a
//! scaled convex combination of reference spectra. The crate provides
//!
//! - [`cube`]: core tensors, periodic gradient operators and conjugate gradients,
//! - [`baselines`]: edge-50 mapping and fully constrained least squares (LCF),
//! - [`rum`]: the multi-block ADMM solver with TV or plug-and-play priors,
//! - [`denoise`]: pluggable denoisers for the plug-and-play step,
//! - [`vca`]: vertex component analysis for dictionary extraction,
//! - [`simkit`]: synthetic scenes and quality metrics,
//! - [`io`]: the binary cube container, dictionary CSV and PGM renders.

pub mod baselines;
pub mod cg;
pub mod cube;
pub mod denoise;
mod error;
pub mod io;
pub mod metrics;
pub mod rum;
pub mod simkit;
pub mod vca;

pub use cube::{
    Dictionary, EnergyGrid, GradientPair, ImageGeometry, PhaseMap, ScalingField, SpectralCube,
};
pub use error::{Error, Result};
