use nalgebra::Vector3;

use crate::geometry::{unproject, DepthMap, FrameTag, Intrinsics, Pointmap, SE3Pose};

use super::scene::{SceneSpec, StaticPrimitive};

/// Identifies which primitive a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyId {
    Static(usize),
    Dynamic(usize),
}

impl BodyId {
    pub fn is_dynamic(&self) -> bool {
        matches!(self, BodyId::Dynamic(_))
    }
}

/// Grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height);
        Self { width, height, pixels }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0.0; width * height] }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.pixels[v * self.width + u]
    }
}

/// Everything known about one rendered frame.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub t_idx: usize,
    pub time: f64,
    pub sensor: usize,
    pub intrinsics: Intrinsics,
    /// Camera-to-world pose.
    pub pose: SE3Pose,
    pub depth: DepthMap,
    /// World-frame pointmap, exactly the unprojection of `depth`.
    pub pointmap: Pointmap,
    /// True where the pixel's nearest hit is a moving body.
    pub dynamic_mask: Vec<bool>,
    pub image: GrayImage,
    pub hit_body: Vec<Option<BodyId>>,
}

pub(crate) struct Hit {
    /// Camera-frame depth (the ray is parameterized so the ray parameter
    /// equals depth).
    pub depth: f64,
    pub normal: Vector3<f64>,
    pub body: BodyId,
    pub albedo: f64,
}

const RAY_EPS: f64 = 1e-9;

fn ray_plane(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    point: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> Option<f64> {
    let denom = dir.dot(normal);
    if denom.abs() < 1e-12 {
        return None;
    }
    let s = (point - origin).dot(normal) / denom;
    (s > RAY_EPS).then_some(s)
}

/// Slab test against an axis-aligned box; returns the entry parameter and
/// the axis crossed at entry.
fn ray_aabb(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    min: &Vector3<f64>,
    max: &Vector3<f64>,
) -> Option<(f64, usize, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 1.0;
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i] < min[i] || origin[i] > max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let mut t0 = (min[i] - origin[i]) * inv;
        let mut t1 = (max[i] - origin[i]) * inv;
        let mut s = -1.0;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            s = 1.0;
        }
        if t0 > t_near {
            t_near = t0;
            axis = i;
            sign = s;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_near > RAY_EPS {
        Some((t_near, axis, sign))
    } else {
        // Origin inside the box: surface is still visible through t_far,
        // but the entry normal is meaningless; treat as a miss.
        None
    }
}

/// Nearest intersection along `origin + s * dir` over all primitives with
/// dynamic bodies evaluated at `dt` seconds past the first timestamp.
pub(crate) fn cast_ray(
    scene: &SceneSpec,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    dt: f64,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |hit: Hit| {
        if hit.depth <= scene.max_depth
            && best.as_ref().is_none_or(|b| hit.depth < b.depth)
        {
            best = Some(hit);
        }
    };

    for (i, prim) in scene.statics.iter().enumerate() {
        match prim {
            StaticPrimitive::Plane { point, normal, albedo } => {
                let pt = Vector3::from(*point);
                let n = Vector3::from(*normal).normalize();
                if let Some(s) = ray_plane(origin, dir, &pt, &n) {
                    // Orient the normal toward the viewer for shading.
                    let n = if n.dot(dir) > 0.0 { -n } else { n };
                    consider(Hit { depth: s, normal: n, body: BodyId::Static(i), albedo: *albedo });
                }
            }
            StaticPrimitive::Box { min, max, albedo } => {
                let mn = Vector3::from(*min);
                let mx = Vector3::from(*max);
                if let Some((s, axis, sign)) = ray_aabb(origin, dir, &mn, &mx) {
                    let mut n = Vector3::zeros();
                    n[axis] = sign;
                    consider(Hit { depth: s, normal: n, body: BodyId::Static(i), albedo: *albedo });
                }
            }
        }
    }

    for (i, body) in scene.bodies.iter().enumerate() {
        let pose = body.pose_at(dt);
        let inv = pose.inverse();
        let o = inv.apply(origin);
        let d = inv.rotation() * dir;
        let h = Vector3::from(body.half_extents);
        if let Some((s, axis, sign)) = ray_aabb(&o, &d, &(-h), &h) {
            let mut n_body = Vector3::zeros();
            n_body[axis] = sign;
            consider(Hit {
                depth: s,
                normal: pose.rotation() * n_body,
                body: BodyId::Dynamic(i),
                albedo: body.albedo,
            });
        }
    }

    best
}

fn shade(scene: &SceneSpec, hit: &Hit) -> f64 {
    let light = Vector3::from(scene.light).normalize();
    let lambert = hit.normal.dot(&light).max(0.0);
    (hit.albedo * (scene.ambient + (1.0 - scene.ambient) * lambert)).clamp(0.0, 1.0)
}

/// Renders sensor `c` at timestamp index `t_idx` by per-pixel ray casting.
///
/// The returned pointmap is the exact unprojection of the returned depth
/// map through the ground-truth camera, so the two are consistent by
/// construction.
pub fn render_frame(scene: &SceneSpec, t_idx: usize, c: usize) -> FrameBundle {
    assert!(t_idx < scene.timestamps.len(), "timestamp index out of range");
    assert!(c < scene.sensors.len(), "sensor index out of range");
    let k = scene.sensors[c].intrinsics;
    let pose = scene.camera_pose(t_idx, c);
    let dt = scene.timestamps[t_idx] - scene.timestamps[0];
    let (w, h) = (k.width, k.height);

    let origin = *pose.translation();
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    let mut dynamic_mask = vec![false; w * h];
    let mut hit_body = vec![None; w * h];
    let mut pixels = vec![0.0; w * h];

    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            // Unit z in camera coordinates makes the ray parameter equal
            // the camera depth.
            let dir_cam = Vector3::new(
                (u as f64 - k.cx) / k.fx,
                (v as f64 - k.cy) / k.fy,
                1.0,
            );
            let dir = pose.rotation() * dir_cam;
            if let Some(hit) = cast_ray(scene, &origin, &dir, dt) {
                depth[i] = hit.depth;
                valid[i] = true;
                dynamic_mask[i] = hit.body.is_dynamic();
                hit_body[i] = Some(hit.body);
                pixels[i] = shade(scene, &hit);
            }
        }
    }

    let depth = DepthMap::new(w, h, depth, valid);
    let pointmap = unproject(&depth, &k, &pose, FrameTag::World);
    FrameBundle {
        t_idx,
        time: scene.timestamps[t_idx],
        sensor: c,
        intrinsics: k,
        pose,
        depth,
        pointmap,
        dynamic_mask,
        image: GrayImage::new(w, h, pixels),
        hit_body,
    }
}
