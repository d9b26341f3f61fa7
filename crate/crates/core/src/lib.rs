//! Constructive approximation of probability densities by deep belief
//! networks with binary hidden layers and real-valued visible units.
//!
//! The pipeline runs target density → convolution smoothing → finite
//! mixture → binary RBM → DBN, and every stage reports measured errors in
//! L^q, sup-norm or Kullback-Leibler divergence.
//!
//! Numerical code is generic over [`Real`] (`f32`/`f64`); the aliases at
//! the crate root fix the scalar to `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binary_rbm;
pub mod dbn;
pub mod densities;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod mixture;
pub mod quadrature;
pub mod scalar;
pub mod seed;
pub mod smoothing;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

pub type BoxDomain = quadrature::BoxDomain<f64>;
pub type QuadratureSpec = quadrature::QuadratureSpec<f64>;
pub type ParentalDensity = densities::ParentalDensity<f64>;
pub type TargetDensity = densities::TargetDensity<f64>;
pub type ShiftedScaled = densities::ShiftedScaled<f64>;
pub type DistanceReport = metrics::DistanceReport<f64>;
pub type SmoothedDensity = smoothing::SmoothedDensity<f64>;
pub type MixtureModel = mixture::MixtureModel<f64>;
pub type RateFit = mixture::RateFit<f64>;
pub type BinaryRbm = binary_rbm::BinaryRbm<f64>;
pub type DiscreteDistribution = binary_rbm::DiscreteDistribution<f64>;
pub type DeepBeliefNetwork = dbn::DeepBeliefNetwork<f64>;
pub type ApproximationCertificate = dbn::ApproximationCertificate<f64>;
