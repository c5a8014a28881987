//! Layer primitives with forward and analytic backward passes.
//!
//! Every backward takes the forward inputs (or a cache), the upstream
//! gradient and a gradient accumulator of the same layer type, and returns
//! the gradient with respect to the layer input.

mod attention;
mod conv;
mod linear;
mod norm;
mod resample;

pub use attention::{channel_pool, SpatialAttention, SpatialAttentionCache};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{default_groups, ConvNormRelu, ConvNormReluCache, GroupNorm, GroupNormCache, GROUP_NORM_EPS};
pub use resample::{
    avg_pool2, avg_pool2_backward, bilinear_resize, bilinear_resize_backward, bilinear_upsample_x2,
    coord_concat, coord_concat_backward, downsample_mask,
};
