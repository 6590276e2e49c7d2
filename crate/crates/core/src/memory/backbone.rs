use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{FrameTag, Pointmap, SE3Pose};
use crate::synth::{GrayImage, SceneSpec};

use super::step::FrameRef;
use super::{ConfidenceMap, TokenGrid};

/// Feature extractor and prediction heads behind the streaming engine.
///
/// The engine treats the backbone as a black box with five stages:
/// encode an image into tokens, decode a (target, reference) token pair,
/// regress a pointmap and confidence from the reference decode, encode
/// memory keys and values, and produce the next step's query tokens.
/// Implementations must be deterministic for a given seed.
pub trait Backbone {
    fn token_dim(&self) -> usize;
    /// Token grid shape (rows, cols).
    fn token_grid(&self) -> (usize, usize);
    fn encode(&self, image: &GrayImage, frame: FrameRef) -> TokenGrid;
    /// Decodes the pair into (target feature, reference feature).
    fn decode(&self, target: &TokenGrid, reference: &TokenGrid, frame: FrameRef)
        -> (TokenGrid, TokenGrid);
    /// Regresses the per-pixel pointmap and confidence for the frame.
    fn point_head(&self, f_ref: &TokenGrid, frame: FrameRef) -> (Pointmap, ConfidenceMap);
    /// Encodes this frame into memory keys and values.
    fn memory_encode(
        &self,
        f_ref: &TokenGrid,
        f_enc: &TokenGrid,
        points: &Pointmap,
        frame: FrameRef,
    ) -> (TokenGrid, TokenGrid);
    /// Queries for the next step from the target-decoded feature.
    fn query_head(&self, f_tar: &TokenGrid, frame: FrameRef) -> TokenGrid;
}

fn positional_encoding(rows: usize, cols: usize, dim: usize) -> TokenGrid {
    let mut grid = TokenGrid::zeros(rows, cols, dim);
    for i in 0..rows * cols {
        let token = grid.token_mut(i);
        for (d, t) in token.iter_mut().enumerate() {
            let rate = (i as f64 + 1.0) / 10_000f64.powf(d as f64 / dim as f64);
            *t = if d % 2 == 0 { rate.sin() } else { rate.cos() };
        }
    }
    grid
}

/// Backbone that emits ground-truth pointmaps with unit confidence.
///
/// Features are a fixed positional encoding: the heads bypass the
/// attention result numerically while the engine still exercises every
/// pool operation. Emitted pointmaps are expressed in each sensor's
/// sequence frame (the sensor's first-timestamp camera frame).
pub struct OracleBackbone {
    dim: usize,
    rows: usize,
    cols: usize,
    pe: TokenGrid,
    frames: BTreeMap<(usize, usize), Pointmap>,
}

impl OracleBackbone {
    /// Renders the scene and stores per-frame ground truth in sequence
    /// coordinates.
    pub fn from_scene(scene: &SceneSpec, dim: usize, patch: usize) -> Self {
        let mut frames = BTreeMap::new();
        for c in 0..scene.sensors.len() {
            let anchor_inv = scene.camera_pose(0, c).inverse();
            for t in 0..scene.timestamps.len() {
                let bundle = crate::synth::render_frame(scene, t, c);
                let seq = crate::geometry::transform(
                    &bundle.pointmap,
                    &anchor_inv,
                    FrameTag::SensorSequence,
                );
                frames.insert((t, c), seq);
            }
        }
        let k = &scene.sensors[0].intrinsics;
        let (rows, cols) = (k.height / patch, k.width / patch);
        Self { dim, rows, cols, pe: positional_encoding(rows, cols, dim), frames }
    }

    /// Builds the oracle from externally supplied sequence-frame
    /// pointmaps keyed by (timestamp index, sensor).
    pub fn from_pointmaps(
        pointmaps: BTreeMap<(usize, usize), Pointmap>,
        dim: usize,
        patch: usize,
    ) -> Self {
        let (w, h) = pointmaps
            .values()
            .next()
            .map(|p| (p.width, p.height))
            .unwrap_or((patch, patch));
        let (rows, cols) = (h / patch, w / patch);
        Self { dim, rows, cols, pe: positional_encoding(rows, cols, dim), frames: pointmaps }
    }

    /// Sequence-frame pointmap for a sensor's first frame anchor.
    pub fn anchor_pose(scene: &SceneSpec, sensor: usize) -> SE3Pose {
        scene.camera_pose(0, sensor)
    }
}

impl Backbone for OracleBackbone {
    fn token_dim(&self) -> usize {
        self.dim
    }

    fn token_grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn encode(&self, _image: &GrayImage, _frame: FrameRef) -> TokenGrid {
        self.pe.clone()
    }

    fn decode(
        &self,
        target: &TokenGrid,
        reference: &TokenGrid,
        _frame: FrameRef,
    ) -> (TokenGrid, TokenGrid) {
        (target.clone(), reference.clone())
    }

    fn point_head(&self, _f_ref: &TokenGrid, frame: FrameRef) -> (Pointmap, ConfidenceMap) {
        let p = self.frames[&(frame.t_idx, frame.sensor)].clone();
        let conf = ConfidenceMap::uniform(p.width, p.height, 1.0);
        (p, conf)
    }

    fn memory_encode(
        &self,
        _f_ref: &TokenGrid,
        _f_enc: &TokenGrid,
        _points: &Pointmap,
        _frame: FrameRef,
    ) -> (TokenGrid, TokenGrid) {
        (self.pe.clone(), self.pe.clone())
    }

    fn query_head(&self, f_tar: &TokenGrid, _frame: FrameRef) -> TokenGrid {
        f_tar.clone()
    }
}

/// Seeded affine backbone for loss and attention tests.
///
/// Every stage is an affine map with weights drawn once from the seed,
/// so outputs vary with image content, are fully deterministic, and stay
/// differentiable end to end.
pub struct ToyLinearBackbone {
    dim: usize,
    rows: usize,
    cols: usize,
    patch: usize,
    width: usize,
    height: usize,
    enc_w: Vec<f64>,
    dec_tar: Vec<f64>,
    dec_ref: Vec<f64>,
    point_w: Vec<f64>,
    conf_w: Vec<f64>,
    key_w: Vec<f64>,
    val_w: Vec<f64>,
    query_w: Vec<f64>,
}

impl ToyLinearBackbone {
    pub fn new(width: usize, height: usize, patch: usize, dim: usize, seed: u64) -> Self {
        let rows = height / patch;
        let cols = width / patch;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let p2 = patch * patch;
        Self {
            dim,
            rows,
            cols,
            patch,
            width,
            height,
            enc_w: mat(dim * p2, 1.0 / p2 as f64),
            dec_tar: mat(dim * 2 * dim, 1.0 / (2 * dim) as f64),
            dec_ref: mat(dim * 2 * dim, 1.0 / (2 * dim) as f64),
            point_w: mat(3 * dim, 0.05),
            conf_w: mat(dim, 0.2),
            key_w: mat(dim * 2 * dim, 1.0 / (2 * dim) as f64),
            val_w: mat(dim * 2 * dim, 1.0 / (2 * dim) as f64),
            query_w: mat(dim * dim, 1.0 / dim as f64),
        }
    }

    fn affine(&self, w: &[f64], input: &[f64], out_dim: usize) -> Vec<f64> {
        let in_dim = input.len();
        let mut out = vec![0.0; out_dim];
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            *out_v = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }

    fn map_tokens(&self, w: &[f64], grid: &TokenGrid) -> TokenGrid {
        let mut out = TokenGrid::zeros(grid.rows, grid.cols, self.dim);
        for i in 0..grid.len() {
            let mapped = self.affine(w, grid.token(i), self.dim);
            out.token_mut(i).copy_from_slice(&mapped);
        }
        out
    }

    fn map_pairs(&self, w: &[f64], a: &TokenGrid, b: &TokenGrid) -> TokenGrid {
        let mut out = TokenGrid::zeros(a.rows, a.cols, self.dim);
        let mut joint = vec![0.0; 2 * self.dim];
        for i in 0..a.len() {
            joint[..self.dim].copy_from_slice(a.token(i));
            joint[self.dim..].copy_from_slice(b.token(i));
            let mapped = self.affine(w, &joint, self.dim);
            out.token_mut(i).copy_from_slice(&mapped);
        }
        out
    }
}

impl Backbone for ToyLinearBackbone {
    fn token_dim(&self) -> usize {
        self.dim
    }

    fn token_grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn encode(&self, image: &GrayImage, _frame: FrameRef) -> TokenGrid {
        assert_eq!(image.width, self.width);
        assert_eq!(image.height, self.height);
        let mut grid = TokenGrid::zeros(self.rows, self.cols, self.dim);
        let mut patch_pixels = vec![0.0; self.patch * self.patch];
        for r in 0..self.rows {
            for c in 0..self.cols {
                for pv in 0..self.patch {
                    for pu in 0..self.patch {
                        patch_pixels[pv * self.patch + pu] =
                            image.at(c * self.patch + pu, r * self.patch + pv);
                    }
                }
                let token = self.affine(&self.enc_w, &patch_pixels, self.dim);
                grid.token_mut(r * self.cols + c).copy_from_slice(&token);
            }
        }
        grid
    }

    fn decode(
        &self,
        target: &TokenGrid,
        reference: &TokenGrid,
        _frame: FrameRef,
    ) -> (TokenGrid, TokenGrid) {
        (
            self.map_pairs(&self.dec_tar, target, reference),
            self.map_pairs(&self.dec_ref, target, reference),
        )
    }

    fn point_head(&self, f_ref: &TokenGrid, _frame: FrameRef) -> (Pointmap, ConfidenceMap) {
        let n = self.width * self.height;
        let mut points = vec![nalgebra::Vector3::zeros(); n];
        let mut raw = vec![0.0; n];
        for v in 0..self.height {
            for u in 0..self.width {
                let token = f_ref.token((v / self.patch) * self.cols + u / self.patch);
                let offset = self.affine(&self.point_w, token, 3);
                // Positional ramp keeps points varying within a patch.
                let base = nalgebra::Vector3::new(
                    (u as f64 / self.width as f64 - 0.5) * 4.0,
                    (v as f64 / self.height as f64 - 0.5) * 4.0,
                    3.0,
                );
                points[v * self.width + u] =
                    base + nalgebra::Vector3::new(offset[0], offset[1], offset[2]);
                raw[v * self.width + u] = self.affine(&self.conf_w, token, 1)[0];
            }
        }
        (
            Pointmap::new(self.width, self.height, points, vec![true; n], FrameTag::SensorSequence),
            ConfidenceMap::from_raw(self.width, self.height, &raw),
        )
    }

    fn memory_encode(
        &self,
        f_ref: &TokenGrid,
        f_enc: &TokenGrid,
        _points: &Pointmap,
        _frame: FrameRef,
    ) -> (TokenGrid, TokenGrid) {
        (
            self.map_pairs(&self.key_w, f_ref, f_enc),
            self.map_pairs(&self.val_w, f_ref, f_enc),
        )
    }

    fn query_head(&self, f_tar: &TokenGrid, _frame: FrameRef) -> TokenGrid {
        self.map_tokens(&self.query_w, f_tar)
    }
}
