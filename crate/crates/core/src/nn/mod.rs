//! Frame-wise 2D kernels with hand-written backward passes.

mod conv;
pub mod cost;
mod ops;

pub use conv::{conv2d_backward, conv2d_forward, Conv2dGrads, Conv2dParams};
pub(crate) use conv::{conv2d_backward_raw, conv2d_forward_raw};
pub use cost::{macs_of, params_of, ConvDesc, FeatureShape, LayerDesc, LayerKind};
pub use ops::{
    global_avg_pool_backward, global_avg_pool_forward, linear_backward, linear_forward, relu_backward,
    relu_forward, softmax_cross_entropy, LinearGrads, LinearParams,
};
pub(crate) use ops::{
    global_avg_pool_backward_raw, global_avg_pool_raw, linear_backward_raw, linear_forward_raw, relu_in_place,
    relu_mask_in_place,
};
