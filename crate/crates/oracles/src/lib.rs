//! Independent scalar reference implementations used as test oracles.
//!
//! Everything here is written as plain per-pixel loops over `f64` slices,
//! deliberately free of any dependency on the production crates, so tests
//! can compare the two code paths. Not part of the shipped library surface
//! (`publish = false`).

pub mod fd;
pub mod metrics;
pub mod ops;
pub mod ssim;
pub mod vif;

pub use fd::finite_diff_grad;
pub use metrics::{average_gradient, mutual_information, qabf, spatial_frequency};
pub use ops::{
    avg_pool2, binarize_by_mean, charbonnier_mean, conv3x3_replicate, enhance_features,
    j_operator, sobel_magnitude,
};
pub use ssim::ssim;
pub use vif::vifp;
