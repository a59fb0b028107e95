//! Reverse-mode differentiation core: tensors, the tape, layer primitives,
//! parameter groups with Adam, and a finite-difference gradient checker.

mod conv;
mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use gradcheck::{finite_diff_gradcheck, primitive_suite};
pub use graph::{BatchStats, Graph, Var};
pub use param::{
    adam_step, batchnorm2d, kaiming_init, AdamConfig, BnConfig, BnMode, Bound, BufferId, Param,
    ParamGroup, ParamId,
};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
