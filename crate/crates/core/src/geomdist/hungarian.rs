use super::{dist, Assignment, GeomError, PointCloud, Result};

/// Size guard for the O(n³) exact solver.
pub const HUNGARIAN_MAX_POINTS: usize = 512;

/// Exact minimum-cost bijection under Euclidean cost (Hungarian method with
/// row/column potentials). Returns the mean matched distance.
pub fn emd_hungarian(x: &PointCloud, y: &PointCloud) -> Result<(f64, Assignment)> {
    let n = x.len();
    if n != y.len() {
        return Err(GeomError::SizeMismatch(n, y.len()));
    }
    if n > HUNGARIAN_MAX_POINTS {
        return Err(GeomError::TooLarge {
            n,
            max: HUNGARIAN_MAX_POINTS,
        });
    }
    let (xp, yp) = (x.points(), y.points());
    let cost = |i: usize, j: usize| dist(&xp[i - 1], &yp[j - 1]);

    // 1-based; row 0 / column 0 are the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    let a = Assignment::from_perm(x, y, perm)?;
    Ok((a.cost, a))
}
