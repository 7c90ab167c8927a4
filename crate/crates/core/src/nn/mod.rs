//! Minimal tensor core, reverse-mode tape and the policy/value network.
pub mod checkpoint;
pub mod network;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use network::{log_softmax, sample_action, softmax, ActionMode, NetConfig, ObsBatch, PolicyNet, PolicyOutput};
pub use optim::{clip_grad_norm, Adam};
pub use tape::{ParamStore, Tape};
pub use tensor::Tensor;
