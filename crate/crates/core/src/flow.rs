//! Dynamic-object detection from flow residuals.
//!
//! Observed optical flow is compared against the ego-motion-induced flow
//! obtained by cross-projecting pointmaps through per-frame estimated
//! cameras; pixels whose residual exceeds a threshold belong to
//! independently moving objects. A region-growing refiner widens the
//! binary mask over the image; external segmenters can be plugged in
//! through [`MaskRefiner`].

use crate::error::{Error, Result};
use crate::geometry::{pose_estimate, project, transform, FrameTag, PnpOptions, Pointmap};
use crate::synth::GrayImage;

/// Per-pixel 2D motion in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub flow: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self { width, height, flow: vec![[0.0, 0.0]; width * height], valid: vec![false; width * height] }
    }
}

/// Indices of two temporally adjacent frames of a single-sensor sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePair {
    pub first: usize,
    pub second: usize,
}

/// Per-pixel mean flow-residual magnitude for one frame.
#[derive(Debug, Clone)]
pub struct CoarseMask {
    pub width: usize,
    pub height: usize,
    pub residual: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Binary moving-object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl DynamicMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, mask: vec![false; width * height] }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn iou(&self, other: &DynamicMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.mask.iter().zip(&other.mask) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Source of observed flow for frame pairs.
pub trait FlowProvider {
    /// Both flow directions for a pair: `(first→second, second→first)`.
    fn flow(&self, pair: FramePair) -> Result<(FlowField, FlowField)>;
}

/// Widens a binary mask using image evidence.
pub trait MaskRefiner {
    fn refine(&self, mask: &DynamicMask, image: &GrayImage) -> DynamicMask;
}

/// Passes the mask through unchanged.
pub struct IdentityRefiner;

impl MaskRefiner for IdentityRefiner {
    fn refine(&self, mask: &DynamicMask, _image: &GrayImage) -> DynamicMask {
        mask.clone()
    }
}

/// Consecutive frame pairs `(t, t+1)` for a sequence of length `len`,
/// each carrying both flow directions.
pub fn make_pairs(len: usize) -> Result<Vec<FramePair>> {
    if len < 2 {
        return Err(Error::SequenceTooShort(len));
    }
    Ok((0..len - 1).map(|t| FramePair { first: t, second: t + 1 }).collect())
}

/// Ego-motion-induced flow between two pointmaps that share a coordinate
/// frame.
///
/// Cameras are recovered from each pointmap by [`pose_estimate`]; the
/// first frame's points are pushed through the second frame's estimated
/// camera (and vice versa), and the flow is the cross-projected position
/// minus the self-projected position.
pub fn ego_flow(
    p1: &Pointmap,
    p2: &Pointmap,
    opts: &PnpOptions,
) -> Result<(FlowField, FlowField)> {
    let (k1, t1) = pose_estimate(p1, opts)?;
    let (k2, t2) = pose_estimate(p2, opts)?;

    let cross = |src: &Pointmap,
                 k_src: &crate::geometry::Intrinsics,
                 t_src: &crate::geometry::SE3Pose,
                 k_dst: &crate::geometry::Intrinsics,
                 t_dst: &crate::geometry::SE3Pose| {
        let in_dst = transform(src, &t_dst.inverse(), FrameTag::Camera);
        let in_src = transform(src, &t_src.inverse(), FrameTag::Camera);
        let (px_dst, _) = project(&in_dst, k_dst);
        let (px_src, _) = project(&in_src, k_src);
        let n = src.width * src.height;
        let mut flow = vec![[0.0, 0.0]; n];
        let mut valid = vec![false; n];
        for i in 0..n {
            if px_dst.valid[i] && px_src.valid[i] {
                flow[i] = [
                    px_dst.uv[i][0] - px_src.uv[i][0],
                    px_dst.uv[i][1] - px_src.uv[i][1],
                ];
                valid[i] = true;
            }
        }
        FlowField { width: src.width, height: src.height, flow, valid }
    };

    let e12 = cross(p1, &k1, &t1, &k2, &t2);
    let e21 = cross(p2, &k2, &t2, &k1, &t1);
    Ok((e12, e21))
}

/// Per-frame mean residual between observed and ego-induced flow.
///
/// Each pair contributes its forward residual to its first frame and its
/// backward residual to its second frame; a frame's residual is the mean
/// over contributing pairs, per pixel, skipping invalid contributions.
pub fn residual_mask(
    pairs: &[FramePair],
    observed: &[(FlowField, FlowField)],
    ego: &[(FlowField, FlowField)],
    num_frames: usize,
) -> Vec<CoarseMask> {
    assert_eq!(pairs.len(), observed.len());
    assert_eq!(pairs.len(), ego.len());
    let (w, h) = observed
        .first()
        .map(|(f, _)| (f.width, f.height))
        .unwrap_or((0, 0));
    let n = w * h;
    let mut sum = vec![vec![0.0; n]; num_frames];
    let mut cnt = vec![vec![0u32; n]; num_frames];

    {
        let mut add = |frame: usize, f: &FlowField, e: &FlowField| {
            for i in 0..n {
                if f.valid[i] && e.valid[i] {
                    let dx = f.flow[i][0] - e.flow[i][0];
                    let dy = f.flow[i][1] - e.flow[i][1];
                    sum[frame][i] += dx.hypot(dy);
                    cnt[frame][i] += 1;
                }
            }
        };
        for (pair, ((f12, f21), (e12, e21))) in pairs.iter().zip(observed.iter().zip(ego)) {
            add(pair.first, f12, e12);
            add(pair.second, f21, e21);
        }
    }

    (0..num_frames)
        .map(|t| {
            let mut residual = vec![0.0; n];
            let mut valid = vec![false; n];
            for i in 0..n {
                if cnt[t][i] > 0 {
                    residual[i] = sum[t][i] / cnt[t][i] as f64;
                    valid[i] = true;
                }
            }
            CoarseMask { width: w, height: h, residual, valid }
        })
        .collect()
}

/// Thresholds a residual mask; invalid pixels binarize to false.
pub fn binarize(m: &CoarseMask, tau: f64) -> DynamicMask {
    assert!(tau > 0.0, "binarization threshold must be positive");
    let mask = m
        .residual
        .iter()
        .zip(&m.valid)
        .map(|(&r, &ok)| ok && r > tau)
        .collect();
    DynamicMask { width: m.width, height: m.height, mask }
}

/// Applies a refiner and unions the result with the input, so refinement
/// can only grow the mask.
pub fn refine(mask: &DynamicMask, image: &GrayImage, refiner: &dyn MaskRefiner) -> DynamicMask {
    let grown = refiner.refine(mask, image);
    let union = mask
        .mask
        .iter()
        .zip(&grown.mask)
        .map(|(&a, &b)| a || b)
        .collect();
    DynamicMask { width: mask.width, height: mask.height, mask: union }
}

/// One frame of a single-sensor sequence as seen by the mask pipeline.
pub struct SequenceFrame {
    pub pointmap: Pointmap,
    pub image: GrayImage,
}

/// End-to-end mask prediction: pairs, observed flow, ego flow, residual
/// averaging, binarization, refinement.
pub fn predict(
    frames: &[SequenceFrame],
    provider: &dyn FlowProvider,
    refiner: &dyn MaskRefiner,
    tau: f64,
    opts: &PnpOptions,
) -> Result<Vec<DynamicMask>> {
    let pairs = make_pairs(frames.len())?;
    let mut observed = Vec::with_capacity(pairs.len());
    let mut ego = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        observed.push(provider.flow(*pair)?);
        ego.push(ego_flow(
            &frames[pair.first].pointmap,
            &frames[pair.second].pointmap,
            opts,
        )?);
    }
    let coarse = residual_mask(&pairs, &observed, &ego, frames.len());
    Ok(coarse
        .iter()
        .zip(frames)
        .map(|(c, frame)| refine(&binarize(c, tau), &frame.image, refiner))
        .collect())
}

/// Region-growing refiner: grows each connected component over pixels
/// whose intensity stays within `tolerance` of the component's seed mean,
/// then closes the result with a 3x3 structuring element.
pub struct RegionGrowRefiner {
    pub tolerance: f64,
}

impl Default for RegionGrowRefiner {
    fn default() -> Self {
        Self { tolerance: 0.05 }
    }
}

fn connected_components(mask: &DynamicMask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut components = Vec::new();
    for start in 0..w * h {
        if !mask.mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (u, v) = (i % w, i / w);
            let mut push = |j: usize| {
                if mask.mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if u > 0 {
                push(i - 1);
            }
            if u + 1 < w {
                push(i + 1);
            }
            if v > 0 {
                push(i - w);
            }
            if v + 1 < h {
                push(i + w);
            }
        }
        components.push(comp);
    }
    components
}

fn morphological_close(mask: &mut Vec<bool>, w: usize, h: usize) {
    let neighborhood = |m: &[bool], u: usize, v: usize, any: bool| -> bool {
        let mut acc = !any;
        for dv in -1i64..=1 {
            for du in -1i64..=1 {
                let (nu, nv) = (u as i64 + du, v as i64 + dv);
                if nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64 {
                    continue;
                }
                let val = m[nv as usize * w + nu as usize];
                if any {
                    acc |= val;
                } else {
                    acc &= val;
                }
            }
        }
        acc
    };
    let dilated: Vec<bool> = (0..w * h)
        .map(|i| neighborhood(mask, i % w, i / w, true))
        .collect();
    *mask = (0..w * h)
        .map(|i| neighborhood(&dilated, i % w, i / w, false))
        .collect();
}

impl MaskRefiner for RegionGrowRefiner {
    fn refine(&self, mask: &DynamicMask, image: &GrayImage) -> DynamicMask {
        assert_eq!(mask.width, image.width);
        assert_eq!(mask.height, image.height);
        let (w, h) = (mask.width, mask.height);
        let mut out = vec![false; w * h];
        for comp in connected_components(mask) {
            let seed_mean: f64 =
                comp.iter().map(|&i| image.pixels[i]).sum::<f64>() / comp.len() as f64;
            let mut visited = vec![false; w * h];
            let mut stack = comp.clone();
            for &i in &comp {
                visited[i] = true;
            }
            while let Some(i) = stack.pop() {
                out[i] = true;
                let (u, v) = (i % w, i / w);
                let mut push = |j: usize| {
                    if !visited[j] && (image.pixels[j] - seed_mean).abs() <= self.tolerance {
                        visited[j] = true;
                        stack.push(j);
                    }
                };
                if u > 0 {
                    push(i - 1);
                }
                if u + 1 < w {
                    push(i + 1);
                }
                if v > 0 {
                    push(i - w);
                }
                if v + 1 < h {
                    push(i + w);
                }
            }
        }
        if !out.iter().any(|&m| m) {
            return DynamicMask { width: w, height: h, mask: out };
        }
        morphological_close(&mut out, w, h);
        DynamicMask { width: w, height: h, mask: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_consecutive_and_counted() {
        assert_eq!(make_pairs(2).unwrap(), vec![FramePair { first: 0, second: 1 }]);
        assert_eq!(make_pairs(5).unwrap().len(), 4);
        assert!(matches!(make_pairs(1), Err(Error::SequenceTooShort(1))));
    }

    fn uniform_coarse(w: usize, h: usize, r: f64) -> CoarseMask {
        CoarseMask { width: w, height: h, residual: vec![r; w * h], valid: vec![true; w * h] }
    }

    #[test]
    fn binarize_thresholds_and_is_monotone() {
        let zero = uniform_coarse(4, 4, 0.0);
        assert_eq!(binarize(&zero, 1.5).count(), 0);

        let mut block = uniform_coarse(4, 4, 0.0);
        for i in 0..4 {
            block.residual[i] = 3.0;
        }
        let m = binarize(&block, 1.5);
        assert_eq!(m.count(), 4);
        assert!(m.mask[0] && m.mask[3] && !m.mask[4]);

        // tau1 < tau2 implies mask(tau2) is a subset of mask(tau1).
        let mut rnd = uniform_coarse(8, 8, 0.0);
        for (i, r) in rnd.residual.iter_mut().enumerate() {
            *r = (i as f64 * 0.37) % 4.0;
        }
        let loose = binarize(&rnd, 0.5);
        let tight = binarize(&rnd, 2.0);
        for i in 0..64 {
            assert!(!tight.mask[i] || loose.mask[i]);
        }
    }

    #[test]
    fn residual_counts_contributions_per_frame() {
        // T = 3: the interior frame receives two contributions.
        let unit = FlowField { width: 1, height: 1, flow: vec![[1.0, 0.0]], valid: vec![true] };
        let zero = FlowField { width: 1, height: 1, flow: vec![[0.0, 0.0]], valid: vec![true] };
        let pairs = make_pairs(3).unwrap();
        let observed = vec![(unit.clone(), unit.clone()), (unit.clone(), unit.clone())];
        let ego = vec![(zero.clone(), zero.clone()), (zero.clone(), zero.clone())];
        let coarse = residual_mask(&pairs, &observed, &ego, 3);
        // |F - E| = 1 for every contribution, so means are 1 regardless
        // of how many terms a frame accumulates; check counts via a
        // one-sided variant.
        assert!((coarse[1].residual[0] - 1.0).abs() < 1e-12);

        // Make the two directions disagree to expose the divisor.
        let two = FlowField { width: 1, height: 1, flow: vec![[2.0, 0.0]], valid: vec![true] };
        let observed = vec![(unit.clone(), two.clone()), (unit.clone(), two.clone())];
        let ego = vec![(zero.clone(), zero.clone()), (zero.clone(), zero.clone())];
        let coarse = residual_mask(&pairs, &observed, &ego, 3);
        assert!((coarse[0].residual[0] - 1.0).abs() < 1e-12, "endpoint: one forward term");
        assert!((coarse[1].residual[0] - 1.5).abs() < 1e-12, "interior: mean of 2 and 1");
        assert!((coarse[2].residual[0] - 2.0).abs() < 1e-12, "endpoint: one backward term");
    }

    #[test]
    fn refine_with_identity_is_identity() {
        let mut mask = DynamicMask::empty(6, 6);
        mask.mask[14] = true;
        let img = GrayImage::zeros(6, 6);
        let out = refine(&mask, &img, &IdentityRefiner);
        assert_eq!(out, mask);
    }

    #[test]
    fn region_growing_recovers_uniform_region_from_partial_seed() {
        // A bright 6x6 block on a dark background, seeded by its left half.
        let (w, h) = (16, 16);
        let mut img = GrayImage::zeros(w, h);
        for v in 5..11 {
            for u in 4..10 {
                img.pixels[v * w + u] = 0.9;
            }
        }
        let mut seed = DynamicMask::empty(w, h);
        for v in 5..11 {
            for u in 4..7 {
                seed.mask[v * w + u] = true;
            }
        }
        let refined = refine(&seed, &img, &RegionGrowRefiner::default());
        let mut gt = DynamicMask::empty(w, h);
        for v in 5..11 {
            for u in 4..10 {
                gt.mask[v * w + u] = true;
            }
        }
        assert!(refined.iou(&gt) >= 0.95, "iou = {}", refined.iou(&gt));
        // Union growth: every seed pixel survives.
        for i in 0..w * h {
            assert!(!seed.mask[i] || refined.mask[i]);
        }
    }

    #[test]
    fn empty_mask_stays_empty_through_refinement() {
        let img = GrayImage::zeros(8, 8);
        let out = refine(&DynamicMask::empty(8, 8), &img, &RegionGrowRefiner::default());
        assert_eq!(out.count(), 0);
    }
}
