//! Streaming 4D reconstruction of dynamic multi-camera scenes.
//!
//! The crate turns per-frame pointmaps (pixel-aligned grids of 3D points)
//! into a consistent 4D point cloud without global optimization:
//!
//! - [`geometry`]: camera models, projection, rigid transforms, and
//!   recovery of intrinsics and pose from a single pointmap.
//! - [`synth`]: an analytic multi-camera scene generator used as the
//!   ground-truth oracle for every other module.
//! - [`memory`]: sensor-aware temporal-spatial memory pools with
//!   attention-based feature updates and accumulated-attention pruning.
//! - [`flow`]: dynamic-object detection from the residual between
//!   observed optical flow and ego-motion-induced flow.
//! - [`align`]: optimization-free registration of per-frame pointmaps
//!   into the world coordinate system.
//! - [`loss`]: confidence-aware regression and scale losses with
//!   analytic gradients.
//! - [`metrics`]: reconstruction and depth-estimation quality metrics.

pub mod align;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod loss;
pub mod memory;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
