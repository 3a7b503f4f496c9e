//! State-space forecasting with mean reversion toward an attractor
//! distribution.
//!
//! Structural models ([`models`]) are filtered with a Kalman or extended
//! Kalman filter ([`ssm`]) over a training window. Multi-step forecasts can
//! then be pulled toward an average of the filtered training states by
//! injecting it as a pseudo-observation at every step ([`meanrev`]).

// `!(x >= 0.0)` style checks are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod meanrev;
pub mod models;
pub mod pipeline;
pub mod ssm;

pub use error::{Error, Result};
pub use meanrev::{AttractorDistribution, Weighting};
pub use models::{Component, LatentLayout, ModelKind, StructuralModel, StructuralSpec};
pub use ssm::{GaussianBelief, Prediction, StateSpaceModel};
