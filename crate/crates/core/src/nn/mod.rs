//! Layer vocabulary, optimizer, and the policy network.

mod adam;
mod layers;
mod policy;

pub use adam::{AdamError, AdamState};
pub use layers::{
    bias_transform, conv2d, dense, layer_norm, layer_norm_spatial, normalize_rows, pixel_grid, softmax_rows,
    spatial_soft_argmax, spatial_soft_argmax_chw, LAYER_NORM_EPS,
};
pub use policy::{
    act, forward_hidden, init_params, policy_forward, truncated_normal, ArchError, ArchitectureConfig, ObsBatch,
    PolicyInput, PolicyOutput,
};
