//! Dense row-major tensors and the handful of kernels the attention, gradient
//! and training code is built from.

mod counted;
mod real;
mod rng;
mod tensor;

pub use counted::{measure, uncounted, Counted, OpCounts};
pub use real::{Precision, Real};
pub use rng::Rng;
pub use tensor::{
    concat_cols, cum_outer, matmul, matmul_nt, matmul_tn, rand_init, rand_uniform, softmax_axis,
    softmax_in_place, xavier_bound, Init, SoftmaxAxis, Tensor,
};
