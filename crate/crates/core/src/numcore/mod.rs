//! Dense arrays, named parameters and a reverse-mode gradient tape.

mod array;
mod params;
mod tape;

pub use array::{argmax, nll, softmax, Array, PROB_FLOOR};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tape::{NodeId, Tape};

pub(crate) use tape::bce_mean;
#[cfg(test)]
pub(crate) use tape::sigmoid;
