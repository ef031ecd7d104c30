//! Differentiable computation core: tensors, a reverse-mode tape, finite
//! difference checks, Adam, and a seeded RNG.

mod adam;
pub mod finite_diff;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use rng::SeededRng;
pub use tape::{conv1d_relu, pairwise_sq_dist, Gradients, NodeId, Tape};
pub use tensor::{argmax, softmax, sq_dist, Tensor};

pub(crate) use tensor::{softmax_unchecked, sq_dist_unchecked};
