//! Difference-in-differences estimation under neighborhood interference.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32`, `f64` and the
//! forward-mode [`scalar::Dual`]); the aliases below fix `f64`.

pub mod analysis;
pub mod design;
pub mod error;
pub mod estimators;
pub mod exposure;
pub mod gmm;
pub mod inference;
pub mod linalg;
pub mod nuisance;
pub mod population;
pub mod sample;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Dual, Real};

pub type Population = population::Population<f64>;
pub type UnitRecord = population::UnitRecord<f64>;
pub type Adjacency = population::Adjacency<f64>;
pub type Sample = sample::Sample<f64>;
pub type Design = design::Design<f64>;
pub type LogitFit = nuisance::LogitFit<f64>;
pub type OutcomeRegFit = nuisance::OutcomeRegFit<f64>;
pub type NuisanceValues = estimators::NuisanceValues<f64>;
pub type PointEstimate = estimators::PointEstimate<f64>;
pub type MomentSystem = gmm::MomentSystem<f64>;
pub type GmmSolution = gmm::GmmSolution<f64>;
pub type VarianceEstimate = inference::VarianceEstimate<f64>;
pub type Matrix = linalg::Matrix<f64>;

pub type Population32 = population::Population<f32>;
pub type Sample32 = sample::Sample<f32>;
