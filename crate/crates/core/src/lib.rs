//! Dynamic Gaussian-splat reconstruction of monocular video.
//!
//! A scene is a set of anisotropic 3D Gaussians split into a still and a
//! moving cluster. Each frame first refines the camera pose against the
//! still points, then refines the points themselves, guided by photometric,
//! relative-depth and optical-flow losses.

pub mod alloc;
pub mod apps;
pub mod camera;
pub mod cluster;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod hull;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod render;
pub mod rng;
pub mod scene;
pub mod tensor;

pub use camera::{Camera, Extrinsics, Intrinsics, Trajectory};
pub use config::{CameraInit, Config, CONFIG_KEYS};
pub use error::{Error, Result};
pub use render::{render, render_backward, RenderAdjoint, RenderGrads, RenderOutput, RenderSettings};
pub use scene::{Cluster, GaussianPoint, GaussianPointSet};
pub use tensor::{Mask2D, Tensor};
