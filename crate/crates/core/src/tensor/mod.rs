//! Dense matrices and the reverse-mode tape that differentiates them.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{symmetric_part, Activation, Gradients, Tape, Var};
