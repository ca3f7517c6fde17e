//! End-to-end helpers shared by the command-line tool and the acceptance
//! suite: dataset loading, reconstruction, interpolation and generation.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{
    denormalize, load_cloud, load_manifest, normalize_unit_cube, sample_points, DataError,
    NormalizationRecord, Split,
};
use crate::geomdist::PointCloud;
use crate::model::{clouds_to_tensor, interpolate_latent, sample_prior, tensor_to_clouds, ModelError, StarNet};
use crate::tensor::nn::Mode;
use crate::tensor::{no_grad, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid alpha list '{0}': {1}")]
    Alphas(String, String),
    #[error("{0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Clouds listed in a manifest (optionally one split), paired with their
/// category. Relative paths resolve against the manifest's directory.
pub fn load_manifest_clouds(manifest: &Path, split: Option<Split>) -> Result<Vec<(String, PointCloud)>> {
    let m = load_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let out: Vec<(String, PointCloud)> = m
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .map(|e| {
            let p = Path::new(&e.path);
            let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            Ok((e.category.clone(), load_cloud(&full)?))
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(PipelineError::Empty(format!(
            "{} lists no clouds{}",
            manifest.display(),
            split.map(|s| format!(" in the {s} split")).unwrap_or_default()
        )));
    }
    Ok(out)
}

/// Cloud files (`.xyz`, `.pcd`, `.bin`) directly inside `dir`, in name order.
pub fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e, "xyz" | "pcd" | "bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Empty(format!("no cloud files in {}", dir.display())));
    }
    Ok(files)
}

/// Every cloud resampled to `n` points; cloud `i` uses seed `seed + i`.
pub fn resample_all(clouds: &[PointCloud], n: usize, seed: u64) -> Result<Vec<PointCloud>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.len() == n {
                Ok(c.clone())
            } else {
                Ok(sample_points(c.points(), n, seed.wrapping_add(i as u64))?)
            }
        })
        .collect()
}

/// Normalized latent code of one cloud and its normalization record.
pub fn encode_cloud(net: &StarNet, x: &PointCloud) -> Result<(Vec<f64>, NormalizationRecord)> {
    let (xn, rec) = normalize_unit_cube(x)?;
    let z = no_grad(|| net.encoder.forward(&clouds_to_tensor(&[xn])?, Mode::Eval))?;
    Ok((z.to_vec(), rec))
}

fn decode_one(net: &StarNet, z: &[f64], rec: &NormalizationRecord) -> Result<PointCloud> {
    let zt = Tensor::new(z.to_vec(), &[1, z.len()])?;
    let y = no_grad(|| net.decoder.forward(&zt, Mode::Eval))?;
    let cloud = tensor_to_clouds(&y)?.remove(0);
    Ok(denormalize(&cloud, rec)?)
}

/// Encode, decode and map back to the input's coordinates.
pub fn reconstruct_cloud(net: &StarNet, x: &PointCloud) -> Result<PointCloud> {
    let (z, rec) = encode_cloud(net, x)?;
    decode_one(net, &z, &rec)
}

/// Decodes `(1 − α)·z_a + α·z_b` for each α. The normalization record is
/// interpolated too (centers linearly, scales geometrically), so α = 0 and
/// α = 1 reproduce [`reconstruct_cloud`] of the endpoints exactly.
pub fn interpolate_clouds(
    net: &StarNet,
    source: &PointCloud,
    target: &PointCloud,
    alphas: &[f64],
) -> Result<Vec<PointCloud>> {
    let (za, ra) = encode_cloud(net, source)?;
    let (zb, rb) = encode_cloud(net, target)?;
    let zs = interpolate_latent(&za, &zb, alphas)?;
    zs.iter()
        .zip(alphas)
        .map(|(z, &a)| {
            let rec = NormalizationRecord {
                center: [0, 1, 2].map(|k| (1.0 - a) * ra.center[k] + a * rb.center[k]),
                scale: ra.scale.powf(1.0 - a) * rb.scale.powf(a),
            };
            decode_one(net, z, &rec)
        })
        .collect()
}

/// `−0.4, −0.2, …, 1.4`.
pub fn default_alphas() -> Vec<f64> {
    (-2..=7).map(|k| k as f64 / 5.0).collect()
}

/// Comma-separated list of finite numbers.
pub fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let out = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PipelineError::Alphas(s.to_string(), format!("'{t}' is not a finite number")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(out)
}

/// `count` clouds from the mapping network and decoder, in normalized
/// coordinates, with prior samples drawn from `seed`.
pub fn generate_clouds(net: &StarNet, count: usize, seed: u64) -> Result<Vec<PointCloud>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = sample_prior(count, net.config.latent_dim, &mut rng);
    let d = net.config.latent_dim;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let wi = Tensor::new(w.data()[i * d..(i + 1) * d].to_vec(), &[1, d])?;
        out.extend(tensor_to_clouds(&net.generate(&wi)?)?);
    }
    Ok(out)
}
