//! Joint detection and estimation of specular multipath components in
//! wideband SIMO channel observations with dense multipath.

pub mod degrees;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod noise;
pub mod quadrature;
pub mod simulator;
pub mod threshold;

pub use nalgebra;
pub use num_complex;

pub use error::{Error, Result};
pub use model::{
    wrap_angle, ArrayGeometry, DispersionDomain, DispersionVector, PulseSpectrum, SteeringModel,
    SPEED_OF_LIGHT,
};
pub use noise::{DmcParams, GammaDps, StructuredCovariance};
