//! Reconstruction and depth-estimation quality metrics.

mod depth;
mod kdtree;
mod normals;
mod recon;

pub use depth::{depth_metrics, DepthReport};
pub use kdtree::KdTree3;
pub use normals::{grid_normals, pca_normals};
pub use recon::{accuracy, completion, normal_consistency, normal_consistency_clouds, ReconReport};

/// Mean of a slice; caller guarantees non-emptiness.
pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median with the even-length convention of averaging the middle pair.
pub(crate) fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
