use thiserror::Error;

use crate::data::DatasetError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("id {id} out of range for vocabulary of size {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("attention segment {segment} has queries but no keys")]
    EmptyKeys { segment: usize },
    #[error("non-finite gradient in slot `{slot}`")]
    NonFiniteGradient { slot: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite loss during gradient check")]
    NonFiniteCheckLoss,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("request {0} was not produced by this generator configuration")]
    UnknownRequest(u64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
