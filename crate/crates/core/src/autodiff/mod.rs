//! Dense arrays, reverse-mode differentiation, optimizers and checkpoints.

mod array;
pub mod checkpoint;
pub mod gumbel;
mod nn;
mod optim;
mod params;
mod tape;

pub use gumbel::{gumbel_softmax_tape, hard_indices};
pub use array::{argmax, matmul, Array};
pub use nn::{Linear, Mlp};
pub use optim::{Adam, Sgd};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use tape::{softmax_rows, Tape, Var};

pub(crate) use tape::{cosine, sigmoid};
