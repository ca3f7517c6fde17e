use super::{sq_dist, PointCloud};

/// For every point of `from`, the index of and squared distance to its nearest
/// point in `to` (lowest index on ties).
pub fn nearest_neighbors(from: &PointCloud, to: &PointCloud) -> Vec<(usize, f64)> {
    from.points()
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, q) in to.points().iter().enumerate() {
                let d = sq_dist(p, q);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance from
/// each side, summed.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> f64 {
    let side = |a: &PointCloud, b: &PointCloud| {
        nearest_neighbors(a, b).iter().map(|&(_, d)| d).sum::<f64>() / a.len() as f64
    };
    side(x, y) + side(y, x)
}

/// Gradient of [`chamfer`] with respect to `x`, nearest neighbours held fixed.
pub fn chamfer_grad(x: &PointCloud, y: &PointCloud) -> Vec<[f64; 3]> {
    let (xp, yp) = (x.points(), y.points());
    let mut g = vec![[0.0; 3]; x.len()];
    let fx = 2.0 / x.len() as f64;
    for (i, &(j, _)) in nearest_neighbors(x, y).iter().enumerate() {
        for k in 0..3 {
            g[i][k] += fx * (xp[i][k] - yp[j][k]);
        }
    }
    let fy = 2.0 / y.len() as f64;
    for (j, &(i, _)) in nearest_neighbors(y, x).iter().enumerate() {
        for k in 0..3 {
            g[i][k] += fy * (xp[i][k] - yp[j][k]);
        }
    }
    g
}
