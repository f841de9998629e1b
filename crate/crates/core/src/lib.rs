//! Discrete-choice toolkit for introducing a new mode into a calibrated nested logit model.
//!
//! The pipeline has five stages, each in its own module:
//!
//! - [`weighting`] rakes survey respondents to census margins,
//! - [`estimate`] fits weighted multinomial logit models by Newton-Raphson,
//! - [`newmode`] turns time and cost coefficients into values of time and pivots a
//!   ride-hailing alternative into the transit nest of a nested logit model,
//! - [`scenario`] sweeps travel-time and fare levels over a trip population,
//! - [`io`] defines the CSV/JSON file formats and run configuration.
//!
//! The mathematics is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the
//! scalar to `f64`, which is what the file formats use.

// `!(x > 0)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod choice;
pub mod error;
pub mod estimate;
pub mod io;
mod linalg;
pub mod newmode;
pub mod purpose;
pub mod scalar;
pub mod scenario;
pub mod weighting;

pub use choice::{ModeId, Utility};
pub use error::Error;
pub use purpose::Purpose;
pub use scalar::Scalar;

pub type UtilityVector = choice::UtilityVector<f64>;
pub type NestedLogitModel = choice::NestedLogitModel<f64>;
pub type NestSpec = choice::NestSpec<f64>;
pub type MarginTable = weighting::MarginTable<f64>;
pub type WeightVector = weighting::WeightVector<f64>;
pub type ChoiceObservation = estimate::ChoiceObservation<f64>;
pub type EstimationResult = estimate::EstimationResult<f64>;
pub type NewModeParams = newmode::NewModeParams<f64>;
pub type VotTable = newmode::VotTable<f64>;
pub type Trip = scenario::Trip<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type ModalSplit = scenario::ModalSplit<f64>;

pub type UtilityVectorF32 = choice::UtilityVector<f32>;
pub type NestedLogitModelF32 = choice::NestedLogitModel<f32>;
