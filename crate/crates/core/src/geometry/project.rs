use nalgebra::Vector3;

use super::types::{DepthMap, FrameTag, Intrinsics, PixelGrid, Pointmap, SE3Pose};
use super::Z_EPSILON;

/// Projects a camera-frame pointmap through a pinhole camera.
///
/// Points with camera depth at or below [`Z_EPSILON`] are marked invalid;
/// invalidity always propagates through masks rather than errors.
pub fn project(points: &Pointmap, k: &Intrinsics) -> (PixelGrid, DepthMap) {
    assert_eq!(points.frame, FrameTag::Camera, "project expects a camera-frame pointmap");
    let n = points.width * points.height;
    let mut uv = vec![[0.0, 0.0]; n];
    let mut depth = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if !points.valid[i] {
            continue;
        }
        let p = &points.points[i];
        if p.z <= Z_EPSILON {
            continue;
        }
        uv[i] = [k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy];
        depth[i] = p.z;
        valid[i] = true;
    }
    (
        PixelGrid { width: points.width, height: points.height, uv, valid: valid.clone() },
        DepthMap::new(points.width, points.height, depth, valid),
    )
}

/// Unprojects a depth map through the camera and applies `pose`, tagging
/// the result with the frame the pose maps into.
pub fn unproject(d: &DepthMap, k: &Intrinsics, pose: &SE3Pose, target: FrameTag) -> Pointmap {
    let n = d.width * d.height;
    let mut points = vec![Vector3::zeros(); n];
    for v in 0..d.height {
        for u in 0..d.width {
            let i = v * d.width + u;
            if !d.valid[i] {
                continue;
            }
            let z = d.depth[i];
            let cam = Vector3::new(
                (u as f64 - k.cx) * z / k.fx,
                (v as f64 - k.cy) * z / k.fy,
                z,
            );
            points[i] = pose.apply(&cam);
        }
    }
    Pointmap::new(d.width, d.height, points, d.valid.clone(), target)
}

/// Applies a rigid transform pointwise and retags the coordinate frame.
pub fn transform(p: &Pointmap, pose: &SE3Pose, target: FrameTag) -> Pointmap {
    let points = p
        .points
        .iter()
        .zip(&p.valid)
        .map(|(x, &ok)| if ok { pose.apply(x) } else { *x })
        .collect();
    Pointmap::new(p.width, p.height, points, p.valid.clone(), target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn single_point_map(p: Vector3<f64>) -> Pointmap {
        Pointmap::new(1, 1, vec![p], vec![true], FrameTag::Camera)
    }

    #[test]
    fn on_axis_point_projects_to_principal_point() {
        let k = Intrinsics::new(100.0, 100.0, 112.0, 112.0, 224, 224);
        let (px, d) = project(&single_point_map(Vector3::new(0.0, 0.0, 1.0)), &k);
        assert!(px.valid[0]);
        assert_eq!(px.uv[0], [112.0, 112.0]);
        assert_eq!(d.depth[0], 1.0);
    }

    #[test]
    fn point_behind_camera_is_invalid() {
        let k = Intrinsics::new(100.0, 100.0, 112.0, 112.0, 224, 224);
        let (px, d) = project(&single_point_map(Vector3::new(0.0, 0.0, -1.0)), &k);
        assert!(!px.valid[0]);
        assert!(!d.valid[0]);
    }

    #[test]
    fn unproject_centered_pixel_constant_depth() {
        let k = Intrinsics::centered(100.0, 4, 4);
        let d = DepthMap::constant(4, 4, 1.0);
        let p = unproject(&d, &k, &SE3Pose::identity(), FrameTag::Camera);
        // cx = cy = 2, so pixel (2, 2) lies on the optical axis.
        let c = p.at(2, 2).unwrap();
        assert_eq!(*c, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn unproject_translation_equivariance() {
        let k = Intrinsics::centered(120.0, 8, 8);
        let mut rng = StdRng::seed_from_u64(7);
        let depth: Vec<f64> = (0..64).map(|_| rng.random_range(0.5..5.0)).collect();
        let d = DepthMap::new(8, 8, depth, vec![true; 64]);
        let cam = unproject(&d, &k, &SE3Pose::identity(), FrameTag::Camera);
        let t = Vector3::new(1.0, -2.0, 3.0);
        let shift = SE3Pose::new(nalgebra::Matrix3::identity(), t).unwrap();
        let moved = unproject(&d, &k, &shift, FrameTag::World);
        for i in 0..64 {
            assert!((moved.points[i] - (cam.points[i] + t)).norm() < 1e-12);
        }
    }

    #[test]
    fn project_unproject_round_trip() {
        let k = Intrinsics::new(150.0, 170.0, 100.0, 120.0, 200, 240);
        let mut rng = StdRng::seed_from_u64(42);
        let n = 200 * 240;
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(0.2..10.0),
                )
            })
            .collect();
        let p = Pointmap::new(200, 240, pts, vec![true; n], FrameTag::Camera);
        let (px, d) = project(&p, &k);
        // Rebuild each point from its continuous pixel and depth.
        for i in 0..n {
            assert!(px.valid[i]);
            let z = d.depth[i];
            let back = Vector3::new(
                (px.uv[i][0] - k.cx) * z / k.fx,
                (px.uv[i][1] - k.cy) * z / k.fy,
                z,
            );
            assert!((back - p.points[i]).norm() < 1e-9, "pixel {i}");
        }
    }

    #[test]
    fn transform_round_trip_and_composition() {
        let mut rng = StdRng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)))
            .collect();
        let p = Pointmap::new(50, 1, pts, vec![true; 50], FrameTag::Camera);
        let a = SE3Pose::from_axis_angle(
            Vector3::new(0.3, -1.0, 0.5),
            0.8,
            Vector3::new(1.0, 2.0, -0.5),
        );
        let b = SE3Pose::from_axis_angle(
            Vector3::new(1.0, 0.2, 0.0),
            -0.4,
            Vector3::new(-2.0, 0.0, 1.5),
        );

        let identity = transform(&p, &SE3Pose::identity(), FrameTag::Camera);
        assert_eq!(identity.points, p.points);

        let there = transform(&p, &a, FrameTag::World);
        let back = transform(&there, &a.inverse(), FrameTag::Camera);
        for i in 0..50 {
            assert!((back.points[i] - p.points[i]).norm() < 1e-12);
        }

        let chained = transform(&transform(&p, &b, FrameTag::World), &a, FrameTag::World);
        let composed = transform(&p, &a.compose(&b), FrameTag::World);
        for i in 0..50 {
            assert!((chained.points[i] - composed.points[i]).norm() < 1e-12);
        }
    }
}
