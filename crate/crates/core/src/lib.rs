//! Set-wise click-through-rate modelling: jagged request batches, a small
//! autodiff core, the HoMer transformer, training/evaluation, a synthetic
//! data generator and sharded serving.

pub mod data;
pub mod error;
pub mod model;
pub mod numeric;
pub mod serving;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
