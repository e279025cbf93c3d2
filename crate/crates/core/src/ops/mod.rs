//! Differentiable neural-network primitives. Every function records its
//! backward rule on the tape of its first operand.

mod channel;
mod conv;
mod elementwise;
mod grid_sample;
mod norm;
mod pool;
mod resize;

pub use channel::{
    add_channels, channel_mean, concat_channels, diff_x, diff_y, fully_connected, global_avg_pool,
    mul_channels, narrow_channels,
};
pub use conv::{conv2d, Conv2dOpts, PadMode};
pub use elementwise::{minimum_of, sigmoid};
pub use grid_sample::{denormalize_coord, grid_sample_bilinear, identity_grid, normalize_coord};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats, BN_EPS};
pub use pool::{avg_pool_reflect, max_pool2d};
pub use resize::{bilinear_resize, resize_nearest, resize_tensor, upsample2};
