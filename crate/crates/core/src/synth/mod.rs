//! Analytic multi-camera dynamic-scene generator.
//!
//! Scenes are built from infinite planes, static boxes, and rigid boxes
//! under constant-velocity motion. Every frame is rendered by exact
//! ray casting, so depth maps, pointmaps, dynamic masks, and optical
//! flow are ground truth to floating-point precision. This module is
//! the verification oracle for the whole pipeline.

mod flow;
mod render;
mod scene;

pub use flow::gt_flow;
pub use render::{render_frame, BodyId, FrameBundle, GrayImage};
pub use scene::{default_scene, DynamicBody, SceneSpec, SensorSpec, StaticPrimitive};
