//! Sequential Monte Carlo posterior sampling with diffusion priors.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom fix it to `f64`.

pub mod ddsmc;
pub mod diffusion;
pub mod discrete;
pub mod error;
pub mod gaussian;
pub mod gmm;
pub mod linalg;
pub mod measurement;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod smc;

pub use ddsmc::{run_ddsmc, DdsmcConfig, LambdaMode, RhoMode};
pub use diffusion::Reconstruction;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Schedule = schedule::NoiseSchedule<f64>;
pub type Measurement = measurement::MeasurementModel<f64>;
pub type Whitened = measurement::WhitenedMeasurement<f64>;
pub type Gmm = gmm::GmmPrior<f64>;
pub type Problem = gmm::GmmProblem<f64>;
pub type Posterior = gmm::ExactPosterior<f64>;
pub type Kernel = diffusion::TemperedKernel<f64>;
pub type Sampler<S> = ddsmc::Ddsmc<f64, S>;
pub type SamplerOutput = ddsmc::DdsmcOutput<f64>;
