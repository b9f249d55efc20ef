//! Video frame interpolation with rectified quadratic flow prediction.
//!
//! Given four consecutive frames `I-1, I0, I1, I2`, the pipeline estimates
//! flows from the two middle frames, fits a constant-acceleration motion
//! per pixel (least squares over three flows, falling back to the two-flow
//! estimate where the motion is not quadratic), reverses the predicted
//! flows onto the intermediate instant, warps and blends the middle frames,
//! and optionally refines the result with a residual network and a
//! two-scale fusion.

pub mod config;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod flo;
pub mod flow_ops;
pub mod frame;
pub mod fusion;
pub mod metrics;
pub mod motion;
pub mod pipeline;
pub mod pyramid;
pub mod scene;
pub mod synthesis;

pub use error::{Error, Result};
pub use frame::{FeatureMap, FlowField, Frame};
pub use pipeline::{FrameQuad, Pipeline, PipelineConfig};
