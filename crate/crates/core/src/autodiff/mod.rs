//! Dense `f64` tensors, a seeded generator, and a reverse-mode tape.

mod rng;
mod tape;
mod tensor;

pub use rng::{gumbel_from_uniform, gumbel_noise, Rng, UNIFORM_CLAMP};
pub use tape::{log_sum_exp, softmax, softmax_rows, Gradients, ParamKey, Tape, Var};
pub use tensor::{argmax, Tensor};
