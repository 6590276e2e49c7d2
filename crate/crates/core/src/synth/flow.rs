use crate::flow::FlowField;
use crate::geometry::Z_EPSILON;

use super::render::render_frame;
use super::scene::SceneSpec;

/// Analytic optical flow of sensor `c` from timestamp index `t1` to `t2`.
///
/// Each source pixel's hit point is advanced by its body's rigid motion
/// (static geometry stays put) and projected into the camera at `t2`;
/// the flow is the projected position minus the source pixel. Pixels
/// whose advanced point falls behind the target camera are invalid.
/// Occlusion is not modeled: flow is defined for every source pixel.
pub fn gt_flow(scene: &SceneSpec, t1: usize, t2: usize, c: usize) -> FlowField {
    let src = render_frame(scene, t1, c);
    let k = scene.sensors[c].intrinsics;
    let cam2_inv = scene.camera_pose(t2, c).inverse();
    let dt1 = scene.timestamps[t1] - scene.timestamps[0];
    let dt2 = scene.timestamps[t2] - scene.timestamps[0];

    let (w, h) = (k.width, k.height);
    let mut flow = vec![[0.0, 0.0]; w * h];
    let mut valid = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let Some(body) = src.hit_body[i] else { continue };
            let x1 = src.pointmap.points[i];
            let x2 = match body {
                super::render::BodyId::Static(_) => x1,
                super::render::BodyId::Dynamic(b) => {
                    let motion = scene.bodies[b]
                        .pose_at(dt2)
                        .compose(&scene.bodies[b].pose_at(dt1).inverse());
                    motion.apply(&x1)
                }
            };
            let y = cam2_inv.apply(&x2);
            if y.z <= Z_EPSILON {
                continue;
            }
            flow[i] = [
                k.fx * y.x / y.z + k.cx - u as f64,
                k.fy * y.y / y.z + k.cy - v as f64,
            ];
            valid[i] = true;
        }
    }
    FlowField { width: w, height: h, flow, valid }
}
