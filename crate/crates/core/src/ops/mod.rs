//! Forward kernels for every differentiable operator, each paired with a
//! crate-private backward kernel that the [`crate::graph`] tape replays.

pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod spatial;

pub use conv::{conv2d, ConvGeometry, ConvSpec};
pub use elementwise::{activation, sigmoid, window_softmax, Activation};
pub use norm::group_norm;
pub use spatial::{
    mul_broadcast, nearest_upsample, pixel_shuffle_compose, pixel_shuffle_decompose, sum_pool,
};
