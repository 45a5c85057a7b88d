//! Recurrent Weibull time-to-event modelling over irregularly sampled
//! longitudinal records.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the command-line tools.

pub mod baselines;
pub mod cell;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod series;
pub mod trainer;
pub mod weibull;

pub use cell::{CellConfig, CellParams, HiddenState};
pub use error::{Error, Result};
pub use model::{ModelParams, ParamTrajectory};
pub use scalar::Scalar;
pub use series::{OutcomeLabel, PatientSeries, TimestepObservation};
pub use trainer::{FoldPlan, TrainConfig, Variant};
pub use weibull::{ParamGrad, WeibullParams};

pub type Model = ModelParams<f64>;
pub type Model32 = ModelParams<f32>;
pub type Weibull = WeibullParams<f64>;
pub type Weibull32 = WeibullParams<f32>;
pub type Series = PatientSeries<f64>;
pub type Series32 = PatientSeries<f32>;
