use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{Intrinsics, SE3Pose};

/// Static scene geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StaticPrimitive {
    /// Infinite plane through `point` with unit `normal`.
    Plane { point: [f64; 3], normal: [f64; 3], albedo: f64 },
    /// Axis-aligned box given by world-frame corners.
    Box { min: [f64; 3], max: [f64; 3], albedo: f64 },
}

/// Rigid box under constant-velocity motion. The pose is the box's
/// body-to-world transform at the first timestamp; linear velocity is in
/// m/s, angular velocity in rad/s about the body center.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicBody {
    pub half_extents: [f64; 3],
    pub pose: SE3Pose,
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub albedo: f64,
}

impl DynamicBody {
    /// Body-to-world pose at time `t` (seconds past the reference time).
    pub fn pose_at(&self, dt: f64) -> SE3Pose {
        let w = Vector3::new(
            self.angular_velocity[0],
            self.angular_velocity[1],
            self.angular_velocity[2],
        );
        let rot = nalgebra::Rotation3::from_scaled_axis(w * dt);
        let r = rot.matrix() * self.pose.rotation();
        let t = self.pose.translation()
            + Vector3::new(
                self.linear_velocity[0],
                self.linear_velocity[1],
                self.linear_velocity[2],
            ) * dt;
        SE3Pose::orthonormalized(r, t)
    }
}

/// One camera of the rig: intrinsics plus its fixed pose relative to the
/// ego vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: usize,
    pub intrinsics: Intrinsics,
    pub rig_pose: SE3Pose,
}

/// Full analytic scene description: geometry, bodies, camera rig, ego
/// trajectory, and timing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub statics: Vec<StaticPrimitive>,
    pub bodies: Vec<DynamicBody>,
    pub sensors: Vec<SensorSpec>,
    /// Ego-to-world pose per timestamp.
    pub ego: Vec<SE3Pose>,
    /// Strictly increasing times in seconds.
    pub timestamps: Vec<f64>,
    /// Unit direction pointing toward the light source.
    pub light: [f64; 3],
    pub ambient: f64,
    /// Rays with camera depth beyond this are treated as misses.
    pub max_depth: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.sensors.is_empty() {
            return Err("scene needs at least one sensor".into());
        }
        if self.ego.len() != self.timestamps.len() {
            return Err("ego trajectory length must match timestamps".into());
        }
        if !self.timestamps.windows(2).all(|w| w[0] < w[1]) {
            return Err("timestamps must be strictly increasing".into());
        }
        for b in &self.bodies {
            if b.half_extents.iter().any(|&e| e <= 0.0) {
                return Err("dynamic body extents must be positive".into());
            }
        }
        for s in &self.statics {
            if let StaticPrimitive::Box { min, max, .. } = s {
                if (0..3).any(|i| max[i] <= min[i]) {
                    return Err("static box extents must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Camera-to-world pose of sensor `c` at timestamp index `t_idx`.
    pub fn camera_pose(&self, t_idx: usize, c: usize) -> SE3Pose {
        self.ego[t_idx].compose(&self.sensors[c].rig_pose)
    }
}

/// Camera-to-world rotation for a camera yawed by `yaw` around world +z
/// and pitched down by `pitch`, using the z-forward / x-right / y-down
/// camera convention in a z-up world.
pub(crate) fn ring_camera_rotation(yaw: f64, pitch: f64) -> Matrix3<f64> {
    let forward = Vector3::new(
        yaw.cos() * pitch.cos(),
        yaw.sin() * pitch.cos(),
        -pitch.sin(),
    );
    let up = Vector3::new(0.0, 0.0, 1.0);
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    Matrix3::from_columns(&[right, down, forward])
}

/// The stock desk-scale scene: a ground plane, an octagonal wall ring,
/// several static boxes, two moving boxes, and a six-camera surround rig
/// streaming five timestamps at 0.5 s spacing.
pub fn default_scene() -> SceneSpec {
    let mut statics = vec![StaticPrimitive::Plane {
        point: [0.0, 0.0, 0.0],
        normal: [0.0, 0.0, 1.0],
        albedo: 0.8,
    }];

    // Octagonal wall ring at radius ~14 m bounds every viewing direction
    // with vertical structure.
    let wall_r = 14.0;
    for i in 0..8 {
        let ang = std::f64::consts::FRAC_PI_4 * i as f64;
        let (cx, cy) = (wall_r * ang.cos(), wall_r * ang.sin());
        // A wall segment is a thin box tangent to the ring.
        let (tx, ty) = (-ang.sin(), ang.cos());
        let half_len = 6.5;
        let (ex, ey) = (
            (tx * half_len).abs().max(0.15),
            (ty * half_len).abs().max(0.15),
        );
        statics.push(StaticPrimitive::Box {
            min: [cx - ex, cy - ey, 0.0],
            max: [cx + ex, cy + ey, 3.0],
            albedo: 0.45 + 0.05 * (i % 4) as f64,
        });
    }

    // Inner static boxes spread across camera sectors.
    let inner = [
        ([5.0, 1.2, 0.0], [7.0, 2.8, 1.6], 0.65),
        ([2.2, 5.0, 0.0], [4.6, 7.2, 1.9], 0.55),
        ([-4.0, 4.2, 0.0], [-2.0, 6.0, 1.4], 0.7),
        ([-7.5, -1.5, 0.0], [-5.5, 0.5, 2.1], 0.6),
        ([-3.5, -6.5, 0.0], [-1.5, -4.5, 1.5], 0.5),
        ([4.0, -6.0, 0.0], [6.4, -4.0, 1.8], 0.7),
    ];
    for (min, max, albedo) in inner {
        statics.push(StaticPrimitive::Box { min, max, albedo });
    }

    let bodies = vec![
        DynamicBody {
            half_extents: [1.2, 0.6, 0.6],
            pose: SE3Pose::new(Matrix3::identity(), Vector3::new(8.0, -2.5, 0.6)).unwrap(),
            linear_velocity: [0.0, 2.0, 0.0],
            angular_velocity: [0.0, 0.0, 0.0],
            albedo: 0.95,
        },
        DynamicBody {
            half_extents: [0.75, 0.75, 0.75],
            pose: SE3Pose::new(Matrix3::identity(), Vector3::new(-2.5, 8.0, 0.75)).unwrap(),
            linear_velocity: [2.5, 0.0, 0.0],
            angular_velocity: [0.0, 0.0, 0.4],
            albedo: 1.0,
        },
    ];

    let pitch = 12f64.to_radians();
    let sensors = (0..6)
        .map(|c| {
            let yaw = std::f64::consts::FRAC_PI_3 * c as f64;
            let pos = Vector3::new(0.3 * yaw.cos(), 0.3 * yaw.sin(), 0.35);
            SensorSpec {
                id: c,
                intrinsics: Intrinsics::centered(160.0, 224, 224),
                rig_pose: SE3Pose::orthonormalized(ring_camera_rotation(yaw, pitch), pos),
            }
        })
        .collect();

    let timestamps: Vec<f64> = (0..5).map(|i| 0.5 * i as f64).collect();
    let ego = timestamps
        .iter()
        .map(|&t| {
            SE3Pose::new(Matrix3::identity(), Vector3::new(1.1 * t, 0.0, 1.2)).unwrap()
        })
        .collect();

    SceneSpec {
        statics,
        bodies,
        sensors,
        ego,
        timestamps,
        light: [0.0, 0.0, 1.0],
        ambient: 0.25,
        max_depth: 45.0,
    }
}
