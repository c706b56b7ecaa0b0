//! Dense tensors, a reverse-mode tape, seeded randomness, and a gradient checker.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_with_floor, GradCheckReport, DEFAULT_ABS_FLOOR};
pub use rng::{RngState, SeededRng, RNG_ALGORITHM};
pub use tape::{softmax, Tape, Var};
pub use tensor::Tensor;
