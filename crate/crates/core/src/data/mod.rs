//! Request-level samples, panoramic sequences, the dataset file format and jagged batching.

pub mod io;
mod jagged;
mod panoramic;
mod sample;
mod transform;

pub use io::{checksum, encode_dataset, read_dataset, write_dataset, Dataset, DatasetError};
pub use jagged::{collate, decollate, JaggedBatch, RequestHeader};
pub use panoramic::{build_panoramic_sequence, ActionFilter, HistoryEntry};
pub use sample::{validate_request, Action, Behavior, Domain, FieldSpec, ItemEntry, Limits, RequestSample, Schema, Violation};
pub use transform::{expand_to_pointwise, mask_side_features};

#[cfg(test)]
pub(crate) use sample::fixtures;
