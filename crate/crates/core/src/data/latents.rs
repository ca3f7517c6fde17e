use std::fmt::Write as _;
use std::path::Path;

use super::io::write_atomic;
use super::{normalize_unit_cube, DataError, Result};
use crate::geomdist::PointCloud;
use crate::model::{clouds_to_tensor, Encoder};
use crate::tensor::nn::Mode;
use crate::tensor::no_grad;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub label: String,
    pub values: Vec<f64>,
}

/// Eval-mode latent code of each labelled cloud after cube normalization.
pub fn export_latents(encoder: &Encoder, clouds: &[(String, PointCloud)]) -> Result<Vec<LatentRow>> {
    clouds
        .iter()
        .map(|(label, c)| {
            let (x, _) = normalize_unit_cube(c)?;
            let z = no_grad(|| encoder.forward(&clouds_to_tensor(&[x])?, Mode::Eval))
                .map_err(|e| DataError::Model(e.to_string()))?;
            Ok(LatentRow {
                label: label.clone(),
                values: z.to_vec(),
            })
        })
        .collect()
}

/// `label<TAB>v1 v2 ...` per row. Values use the shortest round-trip form.
pub fn save_latent_table(path: &Path, rows: &[LatentRow]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        if r.label.contains(['\t', '\n']) {
            return Err(DataError::BadParams(format!("label {:?} contains a tab or newline", r.label)));
        }
        let vals: Vec<String> = r.values.iter().map(f64::to_string).collect();
        writeln!(out, "{}\t{}", r.label, vals.join(" ")).expect("write to String");
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_latent_table(path: &Path) -> Result<Vec<LatentRow>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: name.clone(),
        source,
    })?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let parse = |msg: String| DataError::Parse {
                path: name.clone(),
                line: i + 1,
                msg,
            };
            let (label, vals) = line
                .split_once('\t')
                .ok_or_else(|| parse("expected label<TAB>values".into()))?;
            let values = vals
                .split(' ')
                .map(|v| v.parse::<f64>().map_err(|e| parse(format!("'{v}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(LatentRow {
                label: label.to_string(),
                values,
            })
        })
        .collect()
}
