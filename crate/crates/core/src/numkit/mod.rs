//! Dense kernels and the gradient tape the decoders run on.

mod activation;
mod gradcheck;
mod matrix;
mod tape;

pub use activation::{ffn_forward, Activation};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use matrix::{matmul, softmax_rows, SeqMatrix};
pub use tape::{Gradients, Tape, Var};
