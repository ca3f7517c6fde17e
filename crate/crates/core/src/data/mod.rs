//! Point-cloud files, cube normalization, sampling, dataset splits and the
//! synthetic shape families used as a desk-scale dataset.

mod io;
mod latents;
mod manifest;
mod synth;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomdist::{GeomError, PointCloud};

pub(crate) use io::write_atomic;
pub use io::{load_cloud, save_cloud, CloudFormat};
pub use latents::{export_latents, load_latent_table, save_latent_table, LatentRow};
pub use manifest::{
    load_manifest, save_manifest, split_manifest, DatasetManifest, ManifestEntry, Split,
};
pub use synth::{synth_dataset, synth_shape, ShapeFamily, ShapeParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: header declares {declared} points but {found} follow")]
    CountMismatch {
        path: String,
        declared: usize,
        found: usize,
    },
    #[error("cloud has zero extent (all points identical)")]
    ZeroExtent,
    #[error("normalization scale must be positive, got {0}")]
    BadScale(f64),
    #[error("cannot sample from an empty source")]
    EmptySource,
    #[error("unknown shape family '{0}'")]
    InvalidFamily(String),
    #[error("shape parameters out of range: {0}")]
    BadParams(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("encoder failed: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Offset and scale that map a cloud into `[−1, 1]³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormalizationRecord {
    pub const IDENTITY: NormalizationRecord = NormalizationRecord {
        center: [0.0; 3],
        scale: 1.0,
    };
}

/// Centers on the bounding-box midpoint and divides by the largest half
/// extent, so the result touches ±1 on at least one axis.
pub fn normalize_unit_cube(x: &PointCloud) -> Result<(PointCloud, NormalizationRecord)> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in x.points() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let scale = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0, f64::max);
    if scale <= 0.0 {
        return Err(DataError::ZeroExtent);
    }
    let rec = NormalizationRecord { center, scale };
    let y = x.map(|p| [0, 1, 2].map(|k| ((p[k] - center[k]) / scale).clamp(-1.0, 1.0)))?;
    Ok((y, rec))
}

pub fn denormalize(x: &PointCloud, rec: &NormalizationRecord) -> Result<PointCloud> {
    if !(rec.scale > 0.0 && rec.scale.is_finite()) {
        return Err(DataError::BadScale(rec.scale));
    }
    Ok(x.map(|p| [0, 1, 2].map(|k| p[k] * rec.scale + rec.center[k]))?)
}

/// `n` points drawn uniformly from `x`: without replacement when `n ≤ |x|`,
/// with replacement otherwise.
pub fn sample_points(x: &[[f64; 3]], n: usize, seed: u64) -> Result<PointCloud> {
    if x.is_empty() {
        return Err(DataError::EmptySource);
    }
    if n == 0 {
        return Err(DataError::BadParams("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = if n <= x.len() {
        index::sample(&mut rng, x.len(), n)
            .into_iter()
            .map(|i| x[i])
            .collect()
    } else {
        (0..n).map(|_| x[rng.random_range(0..x.len())]).collect()
    };
    Ok(PointCloud::new(pts)?)
}

/// Rotation about the y (gravity) axis.
pub fn rotate_gravity_axis(x: &PointCloud, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    x.map(|p| [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]])
        .expect("rotation preserves finiteness")
}

#[cfg(test)]
mod tests;
