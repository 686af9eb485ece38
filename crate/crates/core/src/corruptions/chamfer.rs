use crate::error::{Error, Result};
use crate::geom::{dist2, PointCloud};

fn mean_nearest(a: &PointCloud, b: &PointCloud) -> f64 {
    let total: f64 = a
        .points()
        .iter()
        .map(|p| {
            b.points()
                .iter()
                .map(|q| dist2(p, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / a.len() as f64
}

/// Symmetric Chamfer distance: the mean of both directed mean
/// nearest-neighbour (Euclidean) distances.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty cloud"));
    }
    Ok(0.5 * (mean_nearest(a, b) + mean_nearest(b, a)))
}
