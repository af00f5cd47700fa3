//! Dense matrix algebra, a reverse-mode tape, and a finite-difference oracle.

mod finite_diff;
mod matrix;
mod tape;

pub use finite_diff::{finite_diff_grad, group_relative_error, max_relative_error, ParamSet};
pub use matrix::{cosine, elu, leaky_relu, masked_row_softmax, matmul, row_softmax, Matrix, LEAKY_SLOPE};
pub use tape::{Adjoints, GradientSet, Tape, Var};
