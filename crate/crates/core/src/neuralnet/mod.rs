//! Dense networks, reverse-mode differentiation and the Adam optimizer.

pub mod adam;
pub mod network;
pub mod tape;

pub use adam::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use network::{
    finite_diff_gradient, mlp_init, Activation, NetworkParams, NetworkVars, OutputHead,
    LEAKY_SLOPE, SOFTPLUS_FLOOR,
};
pub use tape::{GradientTape, Gradients, NodeId};
