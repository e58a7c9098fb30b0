//! Dense matrices, neural building blocks and reverse-mode gradients.

mod gradcheck;
mod matrix;
mod ops;
mod params;
mod tape;

pub use gradcheck::{finite_diff_check, DEFAULT_STEP};
pub use matrix::{order_invariant_sum, Matrix};
pub use ops::{
    dropout, dropout_mask, elementwise, layer_norm, matmul, relu, sigmoid, softmax_rows, Activation, Mode,
    LAYER_NORM_EPS,
};
pub use params::{Param, ParamStore};
pub use tape::{backward, AttentionBias, Groups, Tape, Var};
