//! Test-time optimised anisotropic joint bilateral upsampling.
//!
//! A guidance image is downsampled, a per-LR-pixel field of anisotropic
//! spatial/range Gaussians is fitted so that splatting the LR guidance
//! reconstructs the HR guidance, and the fitted field is then reused to
//! upsample any LR map aligned with that image (features, depth,
//! probabilities).

// `!(x > 0.0)` checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
mod engine;
pub mod error;
pub mod field;
pub mod grad;
pub mod io;
pub mod metrics;
mod par;
pub mod render;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use field::{
    covariance, init_field, range_log_weight, spatial_log_weight, stencil, support_radius,
    CenterMode, GuidanceSource, KernelField, RenderConfig, SpatialInit, WeightStencil,
};
pub use grad::{check_gradients, check_gradients_detailed, loss_and_grad, GradCheck, GradField};
pub use render::{reconstruct_guidance, render, render_probability, RenderOutput, RenderStats};
pub use tensor::{bilinear_upsample, center_hr, downsample_bilinear, PlanarMap, ScaleFactor};
pub use optim::{fit, fit_with_progress, upsample, OptimConfig, OptimState, ParamSpace};
pub use baselines::jbu_classic;
pub use metrics::{depth_metrics, depth_metrics_with_peak, psnr, MetricReport};
