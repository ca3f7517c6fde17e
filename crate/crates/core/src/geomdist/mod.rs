//! Point-set distances used both as training losses and as evaluation metrics.
//!
//! Conventions:
//! - Chamfer distance is the per-side mean of squared nearest-neighbour
//!   distances, with both sides summed.
//! - EMD is the mean Euclidean (not squared) distance under an optimal
//!   bijection between equally sized clouds.
//!
//! Gradients hold nearest neighbours and assignments fixed at their current
//! values.

mod auction;
mod chamfer;
mod hungarian;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use auction::{emd, emd_auction, AuctionConfig, EmdResult};
pub use chamfer::{chamfer, chamfer_grad, nearest_neighbors};
pub use hungarian::{emd_hungarian, HUNGARIAN_MAX_POINTS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud contains a non-finite coordinate")]
    NonFinite,
    #[error("cloud sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("{n} points exceeds the exact-assignment guard of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("invalid auction configuration: {0}")]
    BadConfig(String),
    #[error("invalid assignment: {0}")]
    BadAssignment(String),
}

pub type Result<T> = std::result::Result<T, GeomError>;

/// `N × 3` coordinates; never empty, always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeomError::EmptyCloud);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        Ok(PointCloud { points })
    }

    /// From a flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(GeomError::BadConfig(format!(
                "flat buffer length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Points reordered so that entry `k` is `self[perm[k]]`.
    pub fn permuted(&self, perm: &[usize]) -> PointCloud {
        PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<PointCloud> {
        PointCloud::new(self.points.iter().map(|&p| f(p)).collect())
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// A bijection from X indices to Y indices and its mean matched distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
}

impl Assignment {
    /// Builds an assignment after checking `perm` is a bijection on `0..n`.
    pub fn from_perm(x: &PointCloud, y: &PointCloud, perm: Vec<usize>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(GeomError::SizeMismatch(x.len(), y.len()));
        }
        if perm.len() != x.len() {
            return Err(GeomError::BadAssignment(format!(
                "length {} for {} points",
                perm.len(),
                x.len()
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &j in &perm {
            if j >= seen.len() || std::mem::replace(&mut seen[j], true) {
                return Err(GeomError::BadAssignment("not a permutation".into()));
            }
        }
        let cost = matched_cost(x, y, &perm);
        Ok(Assignment { perm, cost })
    }
}

/// Mean Euclidean distance between `x[i]` and `y[perm[i]]`.
pub fn matched_cost(x: &PointCloud, y: &PointCloud, perm: &[usize]) -> f64 {
    let total: f64 = x
        .points()
        .iter()
        .zip(perm)
        .map(|(p, &j)| dist(p, &y.points()[j]))
        .sum();
    total / x.len() as f64
}

/// Gradient of the mean matched distance with respect to `x`, assignment
/// frozen. Rows whose matched distance is below 1e-12 are zero.
pub fn emd_grad(x: &PointCloud, y: &PointCloud, a: &Assignment) -> Vec<[f64; 3]> {
    let n = x.len() as f64;
    x.points()
        .iter()
        .zip(&a.perm)
        .map(|(p, &j)| {
            let q = &y.points()[j];
            let d = dist(p, q);
            if d < 1e-12 {
                [0.0; 3]
            } else {
                let s = 1.0 / (n * d);
                [(p[0] - q[0]) * s, (p[1] - q[1]) * s, (p[2] - q[2]) * s]
            }
        })
        .collect()
}

/// Which terms of the reconstruction objective are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Cd,
    Emd,
    Both,
}

impl std::str::FromStr for LossVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cd" => Ok(LossVariant::Cd),
            "emd" => Ok(LossVariant::Emd),
            "both" => Ok(LossVariant::Both),
            other => Err(format!("unknown loss variant '{other}' (expected cd|emd|both)")),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossVariant::Cd => "cd",
            LossVariant::Emd => "emd",
            LossVariant::Both => "both",
        })
    }
}

/// Reconstruction objective evaluated at a prediction `x` against target `y`.
/// Both distances are always reported; `value` and `grad` follow the variant.
#[derive(Debug, Clone)]
pub struct ReconLoss {
    pub value: f64,
    pub cd: f64,
    pub emd: f64,
    pub grad: Vec<[f64; 3]>,
}

pub fn recon_loss(x: &PointCloud, y: &PointCloud, variant: LossVariant) -> Result<ReconLoss> {
    if x.len() != y.len() {
        return Err(GeomError::SizeMismatch(x.len(), y.len()));
    }
    let cd = chamfer(x, y);
    let em = emd(x, y)?;
    let (value, grad) = match variant {
        LossVariant::Cd => (cd, chamfer_grad(x, y)),
        LossVariant::Emd => (em.cost, emd_grad(x, y, &em.assignment)),
        LossVariant::Both => {
            let gc = chamfer_grad(x, y);
            let ge = emd_grad(x, y, &em.assignment);
            let g = gc
                .iter()
                .zip(&ge)
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
                .collect();
            (cd + em.cost, g)
        }
    };
    Ok(ReconLoss {
        value,
        cd,
        emd: em.cost,
        grad,
    })
}
