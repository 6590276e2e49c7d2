use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(
            fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite(),
            "intrinsics must be finite"
        );
        Self { fx, fy, cx, cy, width, height }
    }

    /// Shared-focal intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }
}

/// Coordinate frame a pointmap is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    /// Frame of the first camera of a sensor's streaming sequence.
    SensorSequence,
    /// The camera's own frame (z forward, x right, y down).
    Camera,
    /// The global world frame.
    World,
}

/// Rigid transform stored as rotation plus translation, camera-to-world
/// convention when used as a camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRaw", into = "PoseRaw")]
pub struct SE3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRaw {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRaw> for SE3Pose {
    type Error = Error;
    fn try_from(raw: PoseRaw) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| raw.rotation[i][j]);
        let t = Vector3::new(raw.translation[0], raw.translation[1], raw.translation[2]);
        SE3Pose::new(r, t)
    }
}

impl From<SE3Pose> for PoseRaw {
    fn from(p: SE3Pose) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i][j] = p.rotation[(i, j)];
            }
        }
        PoseRaw { rotation, translation: [p.translation.x, p.translation.y, p.translation.z] }
    }
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl SE3Pose {
    /// Builds a pose, validating the rotation is orthonormal with unit
    /// determinant within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).norm();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::DegenerateGeometry(format!(
                "rotation is not orthonormal (|R'R - I| = {dev:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::DegenerateGeometry(format!(
                "rotation determinant {det} is not 1"
            )));
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a pose by snapping the matrix to its nearest orthogonal
    /// rotation (polar projection via SVD).
    pub fn orthonormalized(m: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            // Flip the axis of least significance to restore det = +1.
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Self { rotation: r, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_scaled_axis(axis.normalize() * angle);
        Self { rotation: *r.matrix(), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle of `self⁻¹ ∘ other` in radians.
    pub fn rotation_distance(&self, other: &Self) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn translation_distance(&self, other: &Self) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Pixel-aligned grid of 3D points in a tagged coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointmap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
    pub frame: FrameTag,
}

impl Pointmap {
    pub fn new(
        width: usize,
        height: usize,
        points: Vec<Vector3<f64>>,
        valid: Vec<bool>,
        frame: FrameTag,
    ) -> Self {
        assert_eq!(points.len(), width * height);
        assert_eq!(valid.len(), width * height);
        debug_assert!(
            points.iter().zip(&valid).all(|(p, &v)| !v || p.iter().all(|c| c.is_finite())),
            "valid points must be finite"
        );
        Self { width, height, points, valid, frame }
    }

    pub fn invalid(width: usize, height: usize, frame: FrameTag) -> Self {
        Self {
            width,
            height,
            points: vec![Vector3::zeros(); width * height],
            valid: vec![false; width * height],
            frame,
        }
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.width && v < self.height);
        v * self.width + u
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Option<&Vector3<f64>> {
        let i = self.idx(u, v);
        self.valid[i].then(|| &self.points[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Iterates `(u, v, point)` over valid pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, &Vector3<f64>)> {
        let w = self.width;
        self.points
            .iter()
            .zip(self.valid.iter())
            .enumerate()
            .filter_map(move |(i, (p, &ok))| ok.then_some((i % w, i / w, p)))
    }

    /// Valid points collected into a dense list.
    pub fn valid_points(&self) -> Vec<Vector3<f64>> {
        self.iter_valid().map(|(_, _, p)| *p).collect()
    }
}

/// Per-pixel depth along the camera z axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(depth.len(), width * height);
        assert_eq!(valid.len(), width * height);
        debug_assert!(
            depth.iter().zip(&valid).all(|(d, &v)| !v || (*d > 0.0 && d.is_finite())),
            "valid depths must be positive and finite"
        );
        Self { width, height, depth, valid }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        Self::new(width, height, vec![depth; width * height], vec![true; width * height])
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }
}

/// Continuous pixel coordinates produced by projection, sharing the
/// validity mask of the accompanying depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
    pub uv: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl PixelGrid {
    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }
}
