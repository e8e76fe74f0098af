//! Differentiable building blocks: tensors flow through a recorded graph,
//! parameters live in stores, and two optimizers (layer-adaptive momentum
//! SGD and Adam) update them.

pub mod encoder;
pub mod graph;
pub mod optim;

pub use encoder::{patch_tensor, Encoder, EncoderConfig};
pub use graph::{Graph, NodeId, PROB_EPS};
pub use optim::{
    validate_groups, AdamConfig, LarsConfig, OptState, ParamGroup, ParamId, ParamStore,
};
