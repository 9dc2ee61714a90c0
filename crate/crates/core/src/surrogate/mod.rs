//! The reference differentiable response model, its trainer, and a synthetic
//! population generator with known effects.

pub mod model;
pub mod synthetic;
pub mod train;

pub use model::*;
pub use synthetic::*;
pub use train::*;
