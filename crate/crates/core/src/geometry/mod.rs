//! Camera models, pointmaps, projection, and pose/intrinsics recovery.

mod focal;
mod pnp;
mod project;
mod types;

pub use focal::estimate_focal;
pub use pnp::{estimate_pose, pose_estimate, PnpOptions};
pub use project::{project, transform, unproject};
pub use types::{DepthMap, FrameTag, Intrinsics, PixelGrid, Pointmap, SE3Pose};

/// Projection validity threshold on camera-frame depth, in meters.
pub const Z_EPSILON: f64 = 1e-6;
