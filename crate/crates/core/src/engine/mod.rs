//! Minimal deterministic tensor and reverse-mode differentiation engine.

pub mod container;
mod init;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

use serde::{Deserialize, Serialize};

pub use init::{he_uniform, he_uniform_with};
pub use layers::{sigmoid, LayerSpec};
pub use loss::{loss, LossKind, EPS};
pub use network::{Graph, NamedTensor, Network, Node};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::Tensor;

/// The only random source used anywhere in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    rand::SeedableRng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}
