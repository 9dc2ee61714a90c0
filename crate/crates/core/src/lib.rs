//! Estimation and alignment of attribute-level causal effects in
//! persona-conditioned survey response models.
//!
//! - [`survey`] and [`ingest`]: schema, personas, respondent data, edit contexts.
//! - [`effects`]: causal-effect vectors, ΔCDF and the CDF distance.
//! - [`objective`]: anchor and effect losses with analytic gradients.
//! - [`surrogate`]: a trainable reference model and a synthetic data generator.
//! - [`metrics`]: Wasserstein alignment scores, equity gaps, misalignment diagnosis.
//! - [`bridge`]: scoring a remote language model through a log-likelihood endpoint.

pub mod bridge;
pub mod distribution;
pub mod effects;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod objective;
mod par;
pub mod seed;
pub mod surrogate;
pub mod survey;

pub use distribution::OptionDistribution;
pub use effects::{causal_effect, cdf_distance, data_effect, model_effect, delta_cdf, scalar_effect, CausalEffectVector, DeltaCdf};
pub use error::{Error, Result};
pub use model::{DifferentiableModel, ResponseModel};
pub use survey::{AttributeSchema, Dataset, EditContext, Level, Persona, Question, RespondentRecord};
