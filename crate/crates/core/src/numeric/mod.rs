//! Dense kernels, a reverse-mode tape over them, Adam, and a finite-difference checker.

mod adam;
pub mod flops;
mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod real;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use flops::{FlopCounter, FlopPolicy};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GRAD_CHECK_FLOOR};
pub use graph::{Graph, Var};
pub use ops::{
    affine, attention_core, concat_cols, concat_rows, embedding_gather, layer_norm, mean_reduce, sigmoid, silu,
    ScaleMode,
};
pub use params::{jitter, read_checkpoint, sample_coordinates, slot_seed, write_checkpoint, Grads, Init, ParamStore, SlotSpec};
pub use real::Real;
pub use tensor::Tensor;
