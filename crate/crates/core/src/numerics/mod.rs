//! Dense tensors, a recorded operation tape with reverse-mode gradients, and
//! a finite-difference verifier.

pub mod gradcheck;
pub mod mlp;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_check, FdReport, Probe};
pub use mlp::{Linear, MlpNodes, MlpParams};
pub use ops::{cosine_similarity, l2_distance, leaky_relu, softmax};
pub use tape::{KinkPattern, NodeId, Tape};
pub use tensor::Tensor;
