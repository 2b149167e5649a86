//! Dense tensors, a reverse-mode tape, parameter storage and gradient checks.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, FdEntry, FdOptions, FdReport};
pub use graph::{Gradients, Graph, Padding, Var};
pub use params::{
    collect_grads, Checkpoint, NamedTensor, ParamId, ParamStore, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use tensor::Tensor;
