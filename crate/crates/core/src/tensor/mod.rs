//! Dense tensors and the reverse-mode tape every model is built on.

mod conv;
mod elementwise;
mod gradcheck;
mod io;
mod linalg;
mod reduce;
mod shape;
mod storage;
mod tape;

pub use elementwise::{broadcast_shape, sigmoid, softplus, BinaryOp, UnaryOp};
pub use gradcheck::{grad_check, grad_check_many};
pub use reduce::ReduceOp;
pub use storage::{numel, strides, Tensor};
pub use tape::{BackwardFn, Tape, Var};
