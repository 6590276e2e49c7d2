use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::focal::estimate_focal;
use super::types::{Intrinsics, Pointmap, SE3Pose};
use super::Z_EPSILON;

/// Options for pose estimation from a pointmap.
#[derive(Debug, Clone)]
pub struct PnpOptions {
    /// Robust sampling for noisy pointmaps. Off by default: oracle inputs
    /// are noiseless and the full support is the best estimator.
    pub use_ransac: bool,
    pub ransac_iterations: usize,
    /// Reprojection inlier threshold in pixels.
    pub inlier_threshold: f64,
    pub seed: u64,
    /// Valid pixels are strided down to at most this many correspondences.
    pub max_support: usize,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            use_ransac: false,
            ransac_iterations: 256,
            inlier_threshold: 2.0,
            seed: 0,
            max_support: 8192,
        }
    }
}

const MIN_POINTS: usize = 6;
const GN_MAX_ITERS: usize = 50;
const COPLANARITY_RATIO: f64 = 1e-9;

struct Correspondences {
    /// Pixel coordinates on the pointmap grid.
    uv: Vec<[f64; 2]>,
    /// 3D points in the external frame.
    x: Vec<Vector3<f64>>,
}

fn gather(p: &Pointmap, max_support: usize) -> Correspondences {
    let valid = p.valid_count();
    let stride = (valid / max_support.max(1)).max(1);
    let mut uv = Vec::new();
    let mut x = Vec::new();
    for (i, (u, v, pt)) in p.iter_valid().enumerate() {
        if i % stride != 0 {
            continue;
        }
        uv.push([u as f64, v as f64]);
        x.push(*pt);
    }
    Correspondences { uv, x }
}

fn check_not_coplanar(points: &[Vector3<f64>]) -> Result<()> {
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min / max < COPLANARITY_RATIO {
        return Err(Error::DegenerateGeometry(
            "support points are coplanar or collinear".into(),
        ));
    }
    Ok(())
}

/// Direct linear transform on K-normalized image coordinates. Returns a
/// world-to-camera estimate (rotation snapped to the nearest orthogonal).
fn dlt(uv: &[[f64; 2]], x: &[Vector3<f64>], k: &Intrinsics) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let n = uv.len();
    // Condition the 3D side: shift the centroid to the origin, scale to
    // unit mean norm.
    let centroid: Vector3<f64> = x.iter().sum::<Vector3<f64>>() / n as f64;
    let scale = (x.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64).max(1e-12);

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let xn = (uv[i][0] - k.cx) / k.fx;
        let yn = (uv[i][1] - k.cy) / k.fy;
        let q = (x[i] - centroid) / scale;
        let h = [q.x, q.y, q.z, 1.0];
        for j in 0..4 {
            a[(2 * i, 4 + j)] = -h[j];
            a[(2 * i, 8 + j)] = yn * h[j];
            a[(2 * i + 1, j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -xn * h[j];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::NonConvergence("dlt svd failed".into()))?;
    let p = vt.row(vt.nrows() - 1);

    let mut m = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = p[4 * r + c];
        }
    }
    let mut t = Vector3::new(p[3], p[7], p[11]);

    // Undo the 3D conditioning: P(X) = P'((X - c)/s).
    t -= m * centroid / scale;
    m /= scale;

    // Fix the projective scale so rotation rows have unit norm, and the
    // sign so points land in front of the camera.
    let row_scale = m.row(2).norm();
    if row_scale < 1e-15 {
        return Err(Error::DegenerateGeometry("dlt produced a rank-deficient solution".into()));
    }
    m /= row_scale;
    t /= row_scale;
    let front = x
        .iter()
        .filter(|p| (m.row(2) * *p)[(0, 0)] + t.z > 0.0)
        .count();
    if front * 2 < n {
        m = -m;
        t = -t;
    }

    let r = SE3Pose::orthonormalized(m, t);
    Ok((*r.rotation(), t))
}

/// Residuals and squared norm for world-to-camera (r, t) with intrinsics k.
/// Points behind the camera are skipped.
fn reprojection_cost(
    uv: &[[f64; 2]],
    x: &[Vector3<f64>],
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &Intrinsics,
) -> f64 {
    let mut cost = 0.0;
    for i in 0..uv.len() {
        let y = r * x[i] + t;
        if y.z <= Z_EPSILON {
            // Heavy penalty keeps line search away from flipped solutions.
            cost += 1e6;
            continue;
        }
        let du = k.fx * y.x / y.z + k.cx - uv[i][0];
        let dv = k.fy * y.y / y.z + k.cy - uv[i][1];
        cost += du * du + dv * dv;
    }
    cost
}

/// Gauss-Newton for the world-to-camera pose with fixed intrinsics, and
/// optionally a shared focal as a seventh parameter.
fn gauss_newton(
    uv: &[[f64; 2]],
    x: &[Vector3<f64>],
    mut r: Matrix3<f64>,
    mut t: Vector3<f64>,
    k: &Intrinsics,
    refine_focal: bool,
) -> Result<(Matrix3<f64>, Vector3<f64>, f64)> {
    let mut f = k.fx;
    let initial = reprojection_cost(uv, x, &r, &t, &Intrinsics { fx: f, fy: f, ..*k });
    let mut cost = initial;

    for _ in 0..GN_MAX_ITERS {
        let ki = Intrinsics { fx: f, fy: f, ..*k };
        let mut jtj = SMatrix::<f64, 7, 7>::zeros();
        let mut jtr = SVector::<f64, 7>::zeros();
        for i in 0..uv.len() {
            let y = r * x[i] + t;
            if y.z <= Z_EPSILON {
                continue;
            }
            let iz = 1.0 / y.z;
            let res = [
                f * y.x * iz + ki.cx - uv[i][0],
                f * y.y * iz + ki.cy - uv[i][1],
            ];
            // d(pixel)/d(camera point)
            let dpdy = [
                [f * iz, 0.0, -f * y.x * iz * iz],
                [0.0, f * iz, -f * y.y * iz * iz],
            ];
            // Camera point under a left-multiplied twist: dy/dω = -[y - t]×,
            // dy/dt = I, plus the focal column when enabled.
            let w = y - t;
            let dydw = [
                [0.0, w.z, -w.y],
                [-w.z, 0.0, w.x],
                [w.y, -w.x, 0.0],
            ];
            let mut jrow = [[0.0; 7]; 2];
            for out in 0..2 {
                for col in 0..3 {
                    let mut acc = 0.0;
                    for m in 0..3 {
                        acc += dpdy[out][m] * dydw[m][col];
                    }
                    jrow[out][col] = acc;
                    jrow[out][3 + col] = dpdy[out][col];
                }
                if refine_focal {
                    jrow[out][6] = if out == 0 { y.x * iz } else { y.y * iz };
                }
            }
            for out in 0..2 {
                for a in 0..7 {
                    jtr[a] += jrow[out][a] * res[out];
                    for b in 0..7 {
                        jtj[(a, b)] += jrow[out][a] * jrow[out][b];
                    }
                }
            }
        }
        if !refine_focal {
            // Pin the focal column so the 7x7 system stays well-posed.
            for a in 0..6 {
                jtj[(a, 6)] = 0.0;
                jtj[(6, a)] = 0.0;
            }
            jtj[(6, 6)] = 1.0;
            jtr[6] = 0.0;
        }

        let delta = match jtj.cholesky() {
            Some(ch) => ch.solve(&(-jtr)),
            None => {
                return Err(Error::DegenerateGeometry(
                    "normal equations are singular".into(),
                ))
            }
        };

        // Backtracking on the full step.
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let dw = Vector3::new(delta[0], delta[1], delta[2]) * step;
            let dt = Vector3::new(delta[3], delta[4], delta[5]) * step;
            let df = delta[6] * step;
            let rot = nalgebra::Rotation3::from_scaled_axis(dw);
            let r_new = rot.matrix() * r;
            let t_new = t + dt;
            let f_new = (f + df).max(1.0);
            let c =
                reprojection_cost(uv, x, &r_new, &t_new, &Intrinsics { fx: f_new, fy: f_new, ..*k });
            if c < cost {
                r = r_new;
                t = t_new;
                f = f_new;
                cost = c;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved || delta.norm() < 1e-14 {
            break;
        }
    }

    if cost > initial {
        return Err(Error::NonConvergence(format!(
            "residual grew from {initial:.3e} to {cost:.3e}"
        )));
    }
    // Undo drift accumulated by repeated incremental rotations.
    let snapped = SE3Pose::orthonormalized(r, t);
    Ok((*snapped.rotation(), t, f))
}

fn solve_pose(
    uv: &[[f64; 2]],
    x: &[Vector3<f64>],
    k: &Intrinsics,
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let (r0, t0) = dlt(uv, x, k)?;
    let (r, t, _) = gauss_newton(uv, x, r0, t0, k, false)?;
    Ok((r, t))
}

/// Full 11-DOF projection-matrix fit: intrinsics are not assumed, the
/// shared focal falls out of the decomposition. Used to seed the joint
/// estimate when the pointmap's frame is far from the camera's own.
fn dlt_full(
    uv: &[[f64; 2]],
    x: &[Vector3<f64>],
    width: usize,
    height: usize,
) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    let n = uv.len();
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let px_scale = (width.max(height)) as f64 / 2.0;
    let centroid: Vector3<f64> = x.iter().sum::<Vector3<f64>>() / n as f64;
    let scale = (x.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64).max(1e-12);

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let xn = (uv[i][0] - cx) / px_scale;
        let yn = (uv[i][1] - cy) / px_scale;
        let q = (x[i] - centroid) / scale;
        let h = [q.x, q.y, q.z, 1.0];
        for j in 0..4 {
            a[(2 * i, 4 + j)] = -h[j];
            a[(2 * i, 8 + j)] = yn * h[j];
            a[(2 * i + 1, j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -xn * h[j];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::NonConvergence("dlt svd failed".into()))?;
    let p = vt.row(vt.nrows() - 1);

    let mut m = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = p[4 * r + c];
        }
    }
    let mut t = Vector3::new(p[3], p[7], p[11]);
    t -= m * centroid / scale;
    m /= scale;

    let row_scale = m.row(2).norm();
    if row_scale < 1e-15 {
        return Err(Error::DegenerateGeometry("dlt produced a rank-deficient solution".into()));
    }
    m /= row_scale;
    t /= row_scale;
    let front = x.iter().filter(|p| (m.row(2) * *p)[(0, 0)] + t.z > 0.0).count();
    if front * 2 < n {
        m = -m;
        t = -t;
    }

    // RQ decomposition by Givens rotations: m * Qx * Qy * Qz upper
    // triangular, rotations applied from the right.
    let mut kmat = m;
    let mut q_acc = Matrix3::<f64>::identity();
    let plans: [(usize, usize, usize); 3] = [(2, 1, 2), (2, 0, 2), (1, 0, 1)];
    for &(row, col, pivot) in &plans {
        let b = kmat[(row, col)];
        let d = kmat[(row, pivot)];
        let r = b.hypot(d);
        if r < 1e-15 {
            continue;
        }
        let (c, s) = (d / r, b / r);
        // Rotation in the (col, pivot) plane.
        let mut g = Matrix3::identity();
        g[(col, col)] = c;
        g[(pivot, pivot)] = c;
        g[(col, pivot)] = s;
        g[(pivot, col)] = -s;
        kmat *= g;
        q_acc *= g;
    }
    let mut rot = q_acc.transpose();
    // Positive intrinsic diagonal.
    for i in 0..3 {
        if kmat[(i, i)] < 0.0 {
            for r in 0..3 {
                kmat[(r, i)] = -kmat[(r, i)];
                rot[(i, r)] = -rot[(i, r)];
            }
        }
    }
    let k33 = kmat[(2, 2)];
    if k33.abs() < 1e-15 {
        return Err(Error::DegenerateGeometry("projection decomposition failed".into()));
    }
    let f = px_scale * (kmat[(0, 0)] + kmat[(1, 1)]) / (2.0 * k33);
    if !(f.is_finite() && f > 1.0) {
        return Err(Error::DegenerateGeometry(format!(
            "decomposed focal {f} is not usable"
        )));
    }
    let t_cam = kmat.try_inverse().ok_or_else(|| {
        Error::DegenerateGeometry("intrinsic factor is singular".into())
    })? * t;
    let snapped = SE3Pose::orthonormalized(rot, t_cam);
    Ok((f, *snapped.rotation(), t_cam))
}

/// Estimates the camera-to-external pose of the camera that observed a
/// pointmap, given intrinsics.
///
/// The 2D-3D correspondence between the pixel grid and the points is
/// solved with a DLT initialization followed by Gauss-Newton refinement
/// of the reprojection error; RANSAC (256 iterations, 2 px inliers) is
/// applied first when `opts.use_ransac` is set.
pub fn estimate_pose(p: &Pointmap, k: &Intrinsics, opts: &PnpOptions) -> Result<SE3Pose> {
    let c = gather(p, opts.max_support);
    if c.uv.len() < MIN_POINTS {
        return Err(Error::DegenerateGeometry(format!(
            "pose estimation needs {MIN_POINTS} valid points, got {}",
            c.uv.len()
        )));
    }
    check_not_coplanar(&c.x)?;

    let (uv, x) = if opts.use_ransac {
        let (uv, x) = ransac_inliers(&c.uv, &c.x, k, opts)?;
        (uv, x)
    } else {
        (c.uv, c.x)
    };

    let (r, t) = solve_pose(&uv, &x, k)?;
    // solve_pose yields world-to-camera; the public contract is
    // camera-to-external.
    Ok(SE3Pose::orthonormalized(r, t).inverse())
}

/// Sample size per RANSAC hypothesis. Larger than the minimal 6 to keep
/// individual DLT fits stable under coordinate noise.
const RANSAC_SAMPLE: usize = 12;

fn collect_inliers(
    uv: &[[f64; 2]],
    x: &[Vector3<f64>],
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &Intrinsics,
    threshold: f64,
) -> Vec<usize> {
    let thr2 = threshold * threshold;
    (0..uv.len())
        .filter(|&i| {
            let y = r * x[i] + t;
            if y.z <= Z_EPSILON {
                return false;
            }
            let du = k.fx * y.x / y.z + k.cx - uv[i][0];
            let dv = k.fy * y.y / y.z + k.cy - uv[i][1];
            du * du + dv * dv < thr2
        })
        .collect()
}

fn ransac_inliers(
    uv: &[[f64; 2]],
    x: &[Vector3<f64>],
    k: &Intrinsics,
    opts: &PnpOptions,
) -> Result<(Vec<[f64; 2]>, Vec<Vector3<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = uv.len();
    let m = RANSAC_SAMPLE.min(n);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..opts.ransac_iterations {
        let pick = sample(&mut rng, n, m);
        let s_uv: Vec<[f64; 2]> = pick.iter().map(|i| uv[i]).collect();
        let s_x: Vec<Vector3<f64>> = pick.iter().map(|i| x[i]).collect();
        if check_not_coplanar(&s_x).is_err() {
            continue;
        }
        let Ok((r, t)) = dlt(&s_uv, &s_x, k) else { continue };
        let inliers = collect_inliers(uv, x, &r, &t, k, opts.inlier_threshold);
        if inliers.len() > best.len() {
            best = inliers;
        }
    }
    if best.len() < MIN_POINTS {
        return Err(Error::DegenerateGeometry(
            "ransac found no consensus set".into(),
        ));
    }
    // Refit on the consensus set and re-collect once; the hypothesis fits
    // are too small to trust their inlier boundary directly.
    let b_uv: Vec<[f64; 2]> = best.iter().map(|&i| uv[i]).collect();
    let b_x: Vec<Vector3<f64>> = best.iter().map(|&i| x[i]).collect();
    if let Ok((r, t)) = solve_pose(&b_uv, &b_x, k) {
        let refined = collect_inliers(uv, x, &r, &t, k, opts.inlier_threshold);
        if refined.len() >= MIN_POINTS {
            best = refined;
        }
    }
    Ok((
        best.iter().map(|&i| uv[i]).collect(),
        best.iter().map(|&i| x[i]).collect(),
    ))
}

/// Recovers intrinsics and camera-to-external pose jointly from a single
/// pointmap.
///
/// The focal is first read off the pointmap's ray directions (treating it
/// as camera-frame) and the pose solved with that focal. Because the
/// camera-frame reading degrades as the pointmap's frame moves away from
/// the camera, a full projection-matrix fit seeds a second candidate, and
/// both are polished by a joint Gauss-Newton over pose and focal; the
/// candidate with the lower reprojection cost wins.
pub fn pose_estimate(p: &Pointmap, opts: &PnpOptions) -> Result<(Intrinsics, SE3Pose)> {
    let c = gather(p, opts.max_support);
    if c.uv.len() < MIN_POINTS {
        return Err(Error::DegenerateGeometry(format!(
            "pose estimation needs {MIN_POINTS} valid points, got {}",
            c.uv.len()
        )));
    }
    check_not_coplanar(&c.x)?;

    let mut best: Option<(f64, f64, Matrix3<f64>, Vector3<f64>)> = None;
    let mut first_err: Option<Error> = None;

    // Candidate A: focal from the camera-frame interpretation, then pose.
    let cand_a = estimate_focal(p).and_then(|f| {
        let k = Intrinsics::centered(f, p.width, p.height);
        let pose = estimate_pose(p, &k, opts)?;
        let w2c = pose.inverse();
        Ok((f, *w2c.rotation(), *w2c.translation()))
    });
    // Candidate B: 11-DOF projection fit, immune to the frame of the input.
    let cand_b = dlt_full(&c.uv, &c.x, p.width, p.height);

    for cand in [cand_a, cand_b] {
        let (f0, r0, t0) = match cand {
            Ok(v) => v,
            Err(e) => {
                first_err.get_or_insert(e);
                continue;
            }
        };
        let k0 = Intrinsics::centered(f0, p.width, p.height);
        match gauss_newton(&c.uv, &c.x, r0, t0, &k0, true) {
            Ok((r, t, f)) => {
                let k = Intrinsics::centered(f, p.width, p.height);
                let cost = reprojection_cost(&c.uv, &c.x, &r, &t, &k);
                if best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, f, r, t));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }

    let (_, f, r, t) = best.ok_or_else(|| {
        first_err.unwrap_or_else(|| Error::NonConvergence("no pose candidate converged".into()))
    })?;
    let k = Intrinsics::centered(f, p.width, p.height);
    Ok((k, SE3Pose::orthonormalized(r, t).inverse()))
}
