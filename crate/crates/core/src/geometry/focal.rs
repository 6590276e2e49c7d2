use crate::error::{Error, Result};

use super::types::Pointmap;
use super::Z_EPSILON;

const MIN_SUPPORT: usize = 32;
const MAX_ITERS: usize = 10;
const REL_TOL: f64 = 1e-6;
const DENOM_EPS: f64 = 1e-12;
const RESIDUAL_FLOOR: f64 = 1e-10;

/// Recovers a shared focal length from a camera-frame pointmap.
///
/// The principal point is fixed at the image center and fx = fy. The
/// estimate minimizes the sum of pixel-space residual norms between the
/// centered pixel grid and the projected ray directions, solved by
/// iteratively reweighted least squares (Weiszfeld iteration).
pub fn estimate_focal(p: &Pointmap) -> Result<f64> {
    let cx = p.width as f64 / 2.0;
    let cy = p.height as f64 / 2.0;

    // (centered pixel, ray direction) pairs for points in front of the camera.
    let mut pix: Vec<[f64; 2]> = Vec::new();
    let mut dir: Vec<[f64; 2]> = Vec::new();
    for (u, v, pt) in p.iter_valid() {
        if pt.z <= Z_EPSILON {
            continue;
        }
        pix.push([u as f64 - cx, v as f64 - cy]);
        dir.push([pt.x / pt.z, pt.y / pt.z]);
    }
    if pix.len() < MIN_SUPPORT {
        return Err(Error::DegenerateGeometry(format!(
            "focal estimation needs {MIN_SUPPORT} points in front of the camera, got {}",
            pix.len()
        )));
    }

    let weighted_fit = |weights: Option<&[f64]>| -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..pix.len() {
            let w = weights.map_or(1.0, |ws| ws[i]);
            num += w * (pix[i][0] * dir[i][0] + pix[i][1] * dir[i][1]);
            den += w * (dir[i][0] * dir[i][0] + dir[i][1] * dir[i][1]);
        }
        if den < DENOM_EPS {
            return Err(Error::DegenerateGeometry(
                "ray directions are collinear with the optical axis".into(),
            ));
        }
        Ok(num / den)
    };

    let mut f = weighted_fit(None)?;
    let mut weights = vec![0.0; pix.len()];
    for _ in 0..MAX_ITERS {
        for i in 0..pix.len() {
            let rx = pix[i][0] - f * dir[i][0];
            let ry = pix[i][1] - f * dir[i][1];
            weights[i] = 1.0 / (rx.hypot(ry)).max(RESIDUAL_FLOOR);
        }
        let next = weighted_fit(Some(&weights))?;
        let done = (next - f).abs() <= REL_TOL * f.abs().max(1.0);
        f = next;
        if done {
            break;
        }
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{unproject, DepthMap, FrameTag, Intrinsics, SE3Pose};
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn self_consistent_map(focal: f64, w: usize, h: usize, seed: u64) -> crate::geometry::Pointmap {
        let k = Intrinsics::centered(focal, w, h);
        let mut rng = StdRng::seed_from_u64(seed);
        let depth: Vec<f64> = (0..w * h).map(|_| rng.random_range(1.0..8.0)).collect();
        let d = DepthMap::new(w, h, depth, vec![true; w * h]);
        unproject(&d, &k, &SE3Pose::identity(), FrameTag::Camera)
    }

    #[test]
    fn exact_on_noiseless_self_consistent_maps() {
        for (i, f) in [50.0, 120.0, 263.7, 500.0].iter().enumerate() {
            let p = self_consistent_map(*f, 32, 32, i as u64);
            let est = estimate_focal(&p).unwrap();
            assert!((est - f).abs() <= 1e-6 * f, "f={f} est={est}");
        }
    }

    /// Direct 1D minimization of the focal cost, independent of the IRLS path.
    pub(crate) fn grid_search_focal(p: &crate::geometry::Pointmap, lo: f64, hi: f64) -> f64 {
        let cx = p.width as f64 / 2.0;
        let cy = p.height as f64 / 2.0;
        let pairs: Vec<([f64; 2], [f64; 2])> = p
            .iter_valid()
            .filter(|(_, _, pt)| pt.z > Z_EPSILON)
            .map(|(u, v, pt)| ([u as f64 - cx, v as f64 - cy], [pt.x / pt.z, pt.y / pt.z]))
            .collect();
        let cost = |f: f64| -> f64 {
            pairs
                .iter()
                .map(|(px, d)| (px[0] - f * d[0]).hypot(px[1] - f * d[1]))
                .sum()
        };
        // Coarse grid then golden-section refinement around the best cell.
        let steps = 450;
        let mut best = lo;
        let mut best_cost = f64::INFINITY;
        for s in 0..=steps {
            let f = lo + (hi - lo) * s as f64 / steps as f64;
            let c = cost(f);
            if c < best_cost {
                best_cost = c;
                best = f;
            }
        }
        let cell = (hi - lo) / steps as f64;
        let (mut a, mut b) = (best - cell, best + cell);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-7 {
            let x1 = b - phi * (b - a);
            let x2 = a + phi * (b - a);
            if cost(x1) < cost(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        (a + b) / 2.0
    }

    #[test]
    fn noisy_estimate_matches_grid_search_oracle() {
        let k = Intrinsics::centered(180.0, 48, 48);
        let mut rng = StdRng::seed_from_u64(11);
        let depth: Vec<f64> = (0..48 * 48).map(|_| rng.random_range(1.5..6.0)).collect();
        let d = DepthMap::new(48, 48, depth, vec![true; 48 * 48]);
        let mut p = unproject(&d, &k, &SE3Pose::identity(), FrameTag::Camera);
        let noise = Normal::new(0.0, 0.01).unwrap();
        for pt in &mut p.points {
            *pt += Vector3::new(
                noise.sample(&mut rng),
                noise.sample(&mut rng),
                noise.sample(&mut rng),
            );
        }
        let est = estimate_focal(&p).unwrap();
        let oracle = grid_search_focal(&p, 50.0, 500.0);
        assert!(
            (est - oracle).abs() <= 0.01 * oracle,
            "est={est} oracle={oracle}"
        );
    }

    #[test]
    fn collinear_rays_are_degenerate() {
        let pts: Vec<Vector3<f64>> = (0..64).map(|i| Vector3::new(0.0, 0.0, 1.0 + i as f64)).collect();
        let p = crate::geometry::Pointmap::new(8, 8, pts, vec![true; 64], FrameTag::Camera);
        assert!(matches!(estimate_focal(&p), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn too_few_points_are_degenerate() {
        let pts = vec![Vector3::new(0.1, 0.1, 1.0); 16];
        let p = crate::geometry::Pointmap::new(4, 4, pts, vec![true; 16], FrameTag::Camera);
        assert!(matches!(estimate_focal(&p), Err(Error::DegenerateGeometry(_))));
    }
}
