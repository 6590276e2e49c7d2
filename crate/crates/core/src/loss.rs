//! Confidence-aware regression and scale losses with analytic gradients.
//!
//! Prediction and supervision pointmaps are normalized independently by
//! their masked mean distances; the regression residual per pixel is
//! weighted by predicted confidence with a `-α log c` regularizer, and a
//! hinge keeps the predicted scale at or below the supervision scale.
//! Gradients with respect to predicted points and raw confidences are
//! analytic and verified against central finite differences.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::DynamicMask;
use crate::geometry::Pointmap;
use crate::memory::ConfidenceMap;

/// Prediction, supervision, and mask for one frame.
#[derive(Debug, Clone)]
pub struct FrameSupervision {
    pub t_idx: usize,
    pub sensor: usize,
    pub pred: Pointmap,
    pub conf: ConfidenceMap,
    pub sup: Pointmap,
    pub mask: DynamicMask,
}

impl FrameSupervision {
    /// Pixels contributing to the loss: masked, valid on both sides.
    fn active(&self) -> Vec<usize> {
        (0..self.mask.mask.len())
            .filter(|&i| self.mask.mask[i] && self.pred.valid[i] && self.sup.valid[i])
            .collect()
    }
}

/// A batch of supervised frames.
#[derive(Debug, Clone, Default)]
pub struct SupervisionBundle {
    pub frames: Vec<FrameSupervision>,
}

/// Loss configuration.
#[derive(Debug, Clone)]
pub struct LossOptions {
    /// Weight of the confidence regularizer.
    pub alpha: f64,
    /// After warm-up, supervise dynamic pixels only; before it, the mask
    /// covers the whole frame.
    pub dynamic_only: bool,
    /// Divide each frame's pixel sum by its active pixel count.
    pub pixel_mean: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { alpha: 0.5, dynamic_only: true, pixel_mean: false }
    }
}

/// Value and gradients of one loss term over a bundle.
#[derive(Debug, Clone)]
pub struct LossPart {
    pub value: f64,
    /// Per frame, per pixel gradient with respect to predicted points.
    pub point_grads: Vec<Vec<Vector3<f64>>>,
    /// Per frame, per pixel gradient with respect to raw confidence.
    pub raw_conf_grads: Vec<Vec<f64>>,
}

/// Total loss: confidence term plus scale term.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub total: f64,
    pub confidence_term: f64,
    pub scale_term: f64,
    pub point_grads: Vec<Vec<Vector3<f64>>>,
    pub raw_conf_grads: Vec<Vec<f64>>,
}

/// Scales a pointmap by the inverse of its masked mean distance.
/// Returns the scaled map and the scale factor.
pub fn normalize(p: &Pointmap, mask: &[bool]) -> Result<(Pointmap, f64)> {
    assert_eq!(mask.len(), p.points.len());
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..p.points.len() {
        if mask[i] && p.valid[i] {
            sum += p.points[i].norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask("normalization needs a masked valid point".into()));
    }
    let scale = sum / count as f64;
    let scaled = Pointmap::new(
        p.width,
        p.height,
        p.points.iter().map(|x| x / scale).collect(),
        p.valid.clone(),
        p.frame,
    );
    Ok((scaled, scale))
}

fn frame_conf_loss(
    f: &FrameSupervision,
    alpha: f64,
    pixel_mean: bool,
) -> Result<(f64, Vec<Vector3<f64>>, Vec<f64>)> {
    let active = f.active();
    if active.is_empty() {
        return Err(Error::EmptyMask(format!(
            "confidence loss has no active pixels at (t={}, sensor={})",
            f.t_idx, f.sensor
        )));
    }
    let m = active.len() as f64;
    let pred_scale = active.iter().map(|&i| f.pred.points[i].norm()).sum::<f64>() / m;
    let sup_scale = active.iter().map(|&i| f.sup.points[i].norm()).sum::<f64>() / m;
    if pred_scale < 1e-15 || sup_scale < 1e-15 {
        return Err(Error::EmptyMask("normalization scale vanished".into()));
    }

    let weight = if pixel_mean { 1.0 / m } else { 1.0 };
    let mut value = 0.0;
    let mut point_grads = vec![Vector3::zeros(); f.pred.points.len()];
    let mut raw_grads = vec![0.0; f.pred.points.len()];
    // Accumulates Σ c_i û_i · p̂_i for the shared scale derivative.
    let mut scale_coupling = 0.0;
    let mut units = vec![Vector3::zeros(); active.len()];

    for (j, &i) in active.iter().enumerate() {
        let c = f.conf.conf[i];
        let r = f.pred.points[i] / pred_scale - f.sup.points[i] / sup_scale;
        let dist = r.norm();
        value += c * dist - alpha * c.ln();
        let unit = if dist > 1e-15 { r / dist } else { Vector3::zeros() };
        units[j] = unit;
        scale_coupling += c * unit.dot(&f.pred.points[i]);
        // d/d raw through c = 1 + exp(raw): dc/draw = c - 1.
        raw_grads[i] = weight * (dist - alpha / c) * (c - 1.0);
    }
    for (j, &i) in active.iter().enumerate() {
        let c = f.conf.conf[i];
        let direct = units[j] * (c / pred_scale);
        let norm_i = f.pred.points[i].norm();
        let scale_grad = if norm_i > 1e-15 {
            f.pred.points[i] * (scale_coupling / (pred_scale * pred_scale * m * norm_i))
        } else {
            Vector3::zeros()
        };
        point_grads[i] = (direct - scale_grad) * weight;
    }
    Ok((value * weight, point_grads, raw_grads))
}

/// Confidence-weighted regression loss over the bundle.
///
/// Per masked pixel: `c · ‖p̂/ŝ - q/s‖ - α log c`, where `ŝ` and `s` are
/// the frame's masked mean distances of prediction and supervision.
pub fn conf_loss(bundle: &SupervisionBundle, alpha: f64, pixel_mean: bool) -> Result<LossPart> {
    assert!(alpha > 0.0, "alpha must be positive");
    let mut value = 0.0;
    let mut point_grads = Vec::with_capacity(bundle.frames.len());
    let mut raw_grads = Vec::with_capacity(bundle.frames.len());
    for f in &bundle.frames {
        let (v, pg, rg) = frame_conf_loss(f, alpha, pixel_mean)?;
        value += v;
        point_grads.push(pg);
        raw_grads.push(rg);
    }
    Ok(LossPart { value, point_grads, raw_conf_grads: raw_grads })
}

/// Hinge on the masked mean distance: `max(0, X(pred) - X(sup))` per
/// frame, zero subgradient at the kink.
pub fn scale_loss(bundle: &SupervisionBundle) -> Result<LossPart> {
    let mut value = 0.0;
    let mut point_grads = Vec::with_capacity(bundle.frames.len());
    let mut raw_grads = Vec::with_capacity(bundle.frames.len());
    for f in &bundle.frames {
        let active = f.active();
        if active.is_empty() {
            return Err(Error::EmptyMask(format!(
                "scale loss has no active pixels at (t={}, sensor={})",
                f.t_idx, f.sensor
            )));
        }
        let m = active.len() as f64;
        let x_pred = active.iter().map(|&i| f.pred.points[i].norm()).sum::<f64>() / m;
        let x_sup = active.iter().map(|&i| f.sup.points[i].norm()).sum::<f64>() / m;
        let mut grads = vec![Vector3::zeros(); f.pred.points.len()];
        if x_pred > x_sup {
            value += x_pred - x_sup;
            for &i in &active {
                let norm_i = f.pred.points[i].norm();
                if norm_i > 1e-15 {
                    grads[i] = f.pred.points[i] / (m * norm_i);
                }
            }
        }
        point_grads.push(grads);
        raw_grads.push(vec![0.0; f.pred.points.len()]);
    }
    Ok(LossPart { value, point_grads, raw_conf_grads: raw_grads })
}

/// Confidence term plus scale term with identical masking.
pub fn total_loss(bundle: &SupervisionBundle, opts: &LossOptions) -> Result<LossValue> {
    let effective = if opts.dynamic_only {
        bundle.clone()
    } else {
        // Warm-up: supervise every mutually valid pixel.
        let mut full = bundle.clone();
        for f in &mut full.frames {
            f.mask.mask = f
                .pred
                .valid
                .iter()
                .zip(&f.sup.valid)
                .map(|(&a, &b)| a && b)
                .collect();
        }
        full
    };
    let conf = conf_loss(&effective, opts.alpha, opts.pixel_mean)?;
    let scale = scale_loss(&effective)?;
    let point_grads = conf
        .point_grads
        .iter()
        .zip(&scale.point_grads)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    Ok(LossValue {
        total: conf.value + scale.value,
        confidence_term: conf.value,
        scale_term: scale.value,
        point_grads,
        raw_conf_grads: conf.raw_conf_grads,
    })
}

/// Verifies an analytic gradient against central finite differences
/// along seeded random directions; returns the worst relative deviation.
pub fn grad_check(
    f: impl Fn(&[f64]) -> f64,
    grad: &[f64],
    x: &[f64],
    h: f64,
    directions: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut worst = 0.0_f64;
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    for _ in 0..directions {
        let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(1e-15);
        for i in 0..n {
            plus[i] = x[i] + h * dir[i] / norm;
            minus[i] = x[i] - h * dir[i] / norm;
        }
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d / norm).sum();
        let denom = fd.abs().max(an.abs()).max(1e-12);
        worst = worst.max((fd - an).abs() / denom);
    }
    worst
}
