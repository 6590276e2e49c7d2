//! Optimization-free registration of pointmaps into world coordinates.
//!
//! Each frame's pointmap carries enough information to recover its own
//! camera; the recovered camera turns the pointmap into a depth map,
//! and the ground-truth camera unprojects that depth straight into the
//! world frame. No global refinement touches the result.

use nalgebra::Vector3;

use crate::error::Result;
use crate::geometry::{
    pose_estimate, unproject, DepthMap, FrameTag, Intrinsics, PnpOptions, Pointmap, SE3Pose,
    Z_EPSILON,
};
use crate::memory::ConfidenceMap;

/// A frame registered to the world: the world pointmap, the transferred
/// depth, and the camera recovered from the input.
#[derive(Debug, Clone)]
pub struct AlignedFrame {
    pub world: Pointmap,
    pub depth: DepthMap,
    pub estimated_intrinsics: Intrinsics,
    /// Camera pose in the input pointmap's coordinate frame.
    pub estimated_pose: SE3Pose,
}

/// Registers one pointmap into the world frame.
///
/// The camera is recovered from the pointmap itself, the pointmap is
/// converted to per-pixel depth in that camera, and the depth is
/// unprojected through the ground-truth camera. Pixel (u, v) of the
/// output corresponds to pixel (u, v) of the input; pixels whose
/// transferred depth is not positive become invalid.
pub fn align_to_world(
    p: &Pointmap,
    gt_k: &Intrinsics,
    gt_pose: &SE3Pose,
    opts: &PnpOptions,
) -> Result<AlignedFrame> {
    let (k_est, t_est) = pose_estimate(p, opts)?;
    let to_cam = t_est.inverse();
    let n = p.width * p.height;
    let mut depth = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if !p.valid[i] {
            continue;
        }
        let z = to_cam.apply(&p.points[i]).z;
        if z > Z_EPSILON {
            depth[i] = z;
            valid[i] = true;
        }
    }
    let depth = DepthMap::new(p.width, p.height, depth, valid);
    let world = unproject(&depth, gt_k, gt_pose, FrameTag::World);
    Ok(AlignedFrame { world, depth, estimated_intrinsics: k_est, estimated_pose: t_est })
}

/// One world point of an assembled scene with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    pub confidence: f64,
    pub sensor: usize,
    pub t_idx: usize,
}

/// Concatenates valid, confidence-filtered points of several world-frame
/// pointmaps. No deduplication is applied.
pub fn assemble_scene(
    frames: &[(&Pointmap, &ConfidenceMap, usize, usize)],
    gamma: f64,
) -> Vec<ScenePoint> {
    let mut out = Vec::new();
    for (p, conf, sensor, t_idx) in frames {
        assert_eq!(p.frame, FrameTag::World, "assemble expects world-frame pointmaps");
        assert_eq!(conf.conf.len(), p.points.len());
        for (i, (point, &ok)) in p.points.iter().zip(&p.valid).enumerate() {
            if ok && conf.conf[i] >= gamma {
                out.push(ScenePoint {
                    position: *point,
                    confidence: conf.conf[i],
                    sensor: *sensor,
                    t_idx: *t_idx,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::transform;
    use crate::synth::{default_scene, render_frame};

    #[test]
    fn gt_camera_frame_pointmap_reproduces_world_ground_truth() {
        let scene = default_scene();
        let bundle = render_frame(&scene, 1, 0);
        let cam = transform(&bundle.pointmap, &bundle.pose.inverse(), FrameTag::Camera);
        let aligned =
            align_to_world(&cam, &bundle.intrinsics, &bundle.pose, &PnpOptions::default())
                .unwrap();
        let mut worst = 0.0_f64;
        for i in 0..cam.points.len() {
            if aligned.world.valid[i] {
                worst = worst.max((aligned.world.points[i] - bundle.pointmap.points[i]).norm());
            }
        }
        assert!(worst < 1e-6, "worst deviation {worst}");
        assert_eq!(aligned.world.valid, bundle.pointmap.valid);
    }

    #[test]
    fn identity_ground_truth_collapses_to_the_input() {
        let scene = default_scene();
        let bundle = render_frame(&scene, 0, 2);
        let cam = transform(&bundle.pointmap, &bundle.pose.inverse(), FrameTag::Camera);
        let aligned = align_to_world(
            &cam,
            &bundle.intrinsics,
            &SE3Pose::identity(),
            &PnpOptions::default(),
        )
        .unwrap();
        for i in 0..cam.points.len() {
            if aligned.world.valid[i] {
                assert!((aligned.world.points[i] - cam.points[i]).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn scaling_the_input_scales_output_depths() {
        let scene = default_scene();
        let bundle = render_frame(&scene, 2, 4);
        let cam = transform(&bundle.pointmap, &bundle.pose.inverse(), FrameTag::Camera);
        let s = 2.5;
        let scaled = Pointmap::new(
            cam.width,
            cam.height,
            cam.points.iter().map(|p| p * s).collect(),
            cam.valid.clone(),
            FrameTag::Camera,
        );
        let a = align_to_world(&cam, &bundle.intrinsics, &bundle.pose, &PnpOptions::default())
            .unwrap();
        let b = align_to_world(&scaled, &bundle.intrinsics, &bundle.pose, &PnpOptions::default())
            .unwrap();
        for i in 0..cam.points.len() {
            if a.depth.valid[i] && b.depth.valid[i] {
                let ratio = b.depth.depth[i] / a.depth.depth[i];
                assert!((ratio - s).abs() < 1e-9, "ratio {ratio}");
            }
        }
    }

    #[test]
    fn rigid_equivariance_of_ground_truth_pose() {
        let scene = default_scene();
        let bundle = render_frame(&scene, 1, 5);
        let cam = transform(&bundle.pointmap, &bundle.pose.inverse(), FrameTag::Camera);
        let extra = SE3Pose::from_axis_angle(
            Vector3::new(0.1, 0.9, 0.2),
            0.6,
            Vector3::new(2.0, -1.0, 0.4),
        );
        let a = align_to_world(&cam, &bundle.intrinsics, &bundle.pose, &PnpOptions::default())
            .unwrap();
        let composed = extra.compose(&bundle.pose);
        let b = align_to_world(&cam, &bundle.intrinsics, &composed, &PnpOptions::default())
            .unwrap();
        for i in 0..cam.points.len() {
            if a.world.valid[i] {
                let moved = extra.apply(&a.world.points[i]);
                assert!((moved - b.world.points[i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn assembly_filters_by_confidence_without_moving_points() {
        let scene = default_scene();
        let bundle = render_frame(&scene, 0, 0);
        let n = bundle.pointmap.points.len();
        let conf = ConfidenceMap {
            width: bundle.pointmap.width,
            height: bundle.pointmap.height,
            conf: (0..n).map(|i| 1.0 + (i % 10) as f64 * 0.2).collect(),
        };
        let frames = [(&bundle.pointmap, &conf, 0usize, 0usize)];
        let all = assemble_scene(&frames, 1.0);
        assert_eq!(all.len(), bundle.pointmap.valid_count());
        let some = assemble_scene(&frames, 1.5);
        assert!(some.len() < all.len() && !some.is_empty());
        let none = assemble_scene(&frames, 99.0);
        assert!(none.is_empty());
        // The filter only drops points; survivors are bit-identical.
        let mut j = 0;
        for p in &all {
            if p.confidence >= 1.5 {
                assert_eq!(*p, some[j]);
                j += 1;
            }
        }
        assert_eq!(j, some.len());
    }
}
