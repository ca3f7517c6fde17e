//! Set-level generation metrics between a reference and a generated set of
//! clouds: JSD over voxelized point marginals, and MMD, COV and 1-NNA under
//! a Chamfer or EMD base distance.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{normalize_unit_cube, DataError};
use crate::geomdist::{chamfer, emd, GeomError, PointCloud};

pub const JSD_GRID_RES: usize = 28;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cloud set '{0}' is empty")]
    EmptySet(String),
    #[error("cloud set '{label}' mixes point counts {expected} and {found}")]
    NonUniform {
        label: String,
        expected: usize,
        found: usize,
    },
    #[error("set sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("1-NNA needs at least 2 clouds per set, got {0}")]
    TooFew(usize),
    #[error("grid resolution must be positive")]
    BadGrid,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseDistance {
    Cd,
    Emd,
}

impl BaseDistance {
    pub fn eval(self, a: &PointCloud, b: &PointCloud) -> Result<f64> {
        Ok(match self {
            BaseDistance::Cd => chamfer(a, b),
            BaseDistance::Emd => emd(a, b)?.cost,
        })
    }
}

/// Non-empty collection of clouds that all have the same point count.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudSet {
    clouds: Vec<PointCloud>,
    label: String,
}

impl CloudSet {
    pub fn new(clouds: Vec<PointCloud>, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let Some(first) = clouds.first() else {
            return Err(MetricsError::EmptySet(label));
        };
        let n = first.len();
        if let Some(bad) = clouds.iter().find(|c| c.len() != n) {
            return Err(MetricsError::NonUniform {
                label,
                expected: n,
                found: bad.len(),
            });
        }
        Ok(CloudSet { clouds, label })
    }

    pub fn clouds(&self) -> &[PointCloud] {
        &self.clouds
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Each cloud mapped into `[−1, 1]³` independently.
    pub fn normalized(&self) -> Result<CloudSet> {
        let clouds = self
            .clouds
            .iter()
            .map(|c| normalize_unit_cube(c).map(|(x, _)| x))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        CloudSet::new(clouds, self.label.clone())
    }
}

/// Row-major `|A| × |B|` matrix of base distances.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDistances {
    pub rows: usize,
    pub cols: usize,
    pub base: BaseDistance,
    pub matrix: Vec<f64>,
}

impl PairwiseDistances {
    pub fn compute(a: &CloudSet, b: &CloudSet, base: BaseDistance) -> Result<Self> {
        let (rows, cols) = (a.len(), b.len());
        let matrix = (0..rows * cols)
            .into_par_iter()
            .map(|k| base.eval(&a.clouds[k / cols], &b.clouds[k % cols]))
            .collect::<Result<Vec<_>>>()?;
        Ok(PairwiseDistances {
            rows,
            cols,
            base,
            matrix,
        })
    }

    /// Distances within one set; the diagonal is left at zero and each
    /// unordered pair is evaluated once.
    pub fn within(a: &CloudSet, base: BaseDistance) -> Result<Self> {
        let n = a.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let vals = pairs
            .par_iter()
            .map(|&(i, j)| base.eval(&a.clouds[i], &a.clouds[j]))
            .collect::<Result<Vec<_>>>()?;
        let mut matrix = vec![0.0; n * n];
        for (&(i, j), v) in pairs.iter().zip(vals) {
            matrix[i * n + j] = v;
            matrix[j * n + i] = v;
        }
        Ok(PairwiseDistances {
            rows: n,
            cols: n,
            base,
            matrix,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols + j]
    }

    pub fn transposed(&self) -> Self {
        let mut matrix = vec![0.0; self.matrix.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                matrix[j * self.rows + i] = self.get(i, j);
            }
        }
        PairwiseDistances {
            rows: self.cols,
            cols: self.rows,
            base: self.base,
            matrix,
        }
    }
}

/// Jensen-Shannon divergence between pooled voxel occupancies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jsd {
    pub value: f64,
    /// Points that fell outside `[−1, 1]³` and were clamped to the border.
    pub clamped: usize,
}

fn voxel_histogram(set: &CloudSet, res: usize, clamped: &mut usize) -> Vec<f64> {
    let mut h = vec![0.0; res * res * res];
    let cell = |v: f64, clamped: &mut bool| {
        if !(-1.0..=1.0).contains(&v) {
            *clamped = true;
        }
        let t = ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * res as f64).floor() as usize;
        t.min(res - 1)
    };
    let mut total = 0.0;
    for c in &set.clouds {
        for p in c.points() {
            let mut out = false;
            let (i, j, k) = (cell(p[0], &mut out), cell(p[1], &mut out), cell(p[2], &mut out));
            *clamped += usize::from(out);
            h[(i * res + j) * res + k] += 1.0;
            total += 1.0;
        }
    }
    h.iter_mut().for_each(|v| *v /= total);
    h
}

/// JSD in bits between the `grid_res³` occupancy distributions of all points
/// of each set over `[−1, 1]³`.
pub fn jsd(reference: &CloudSet, generated: &CloudSet, grid_res: usize) -> Result<Jsd> {
    if grid_res == 0 {
        return Err(MetricsError::BadGrid);
    }
    let mut clamped = 0;
    let p = voxel_histogram(reference, grid_res, &mut clamped);
    let q = voxel_histogram(generated, grid_res, &mut clamped);
    if clamped > 0 {
        log::warn!("jsd: {clamped} points outside [-1,1]^3 were clamped");
    }
    let mut value = 0.0;
    for (&a, &b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            value += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            value += 0.5 * b * (b / m).log2();
        }
    }
    Ok(Jsd {
        value: value.clamp(0.0, 1.0),
        clamped,
    })
}

/// Mean over reference rows of the row minimum; `d` is reference × generated.
pub fn mmd_from(d: &PairwiseDistances) -> f64 {
    let total: f64 = (0..d.rows)
        .map(|i| (0..d.cols).map(|j| d.get(i, j)).fold(f64::INFINITY, f64::min))
        .sum();
    total / d.rows as f64
}

pub fn mmd(reference: &CloudSet, generated: &CloudSet, base: BaseDistance) -> Result<f64> {
    Ok(mmd_from(&PairwiseDistances::compute(reference, generated, base)?))
}

/// Fraction of reference clouds that are the nearest reference (lowest index
/// on ties) of at least one generated cloud; `d` is reference × generated.
pub fn coverage_from(d: &PairwiseDistances) -> f64 {
    let mut hit = vec![false; d.rows];
    for j in 0..d.cols {
        let mut best = (0, f64::INFINITY);
        for i in 0..d.rows {
            if d.get(i, j) < best.1 {
                best = (i, d.get(i, j));
            }
        }
        hit[best.0] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / d.rows as f64
}

pub fn coverage(reference: &CloudSet, generated: &CloudSet, base: BaseDistance) -> Result<f64> {
    Ok(coverage_from(&PairwiseDistances::compute(
        reference, generated, base,
    )?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneNna {
    pub accuracy: f64,
    /// Some reference cloud coincides exactly with some generated cloud.
    pub degenerate: bool,
}

/// Leave-one-out 1-NN two-sample accuracy over the union of both sets.
/// When several nearest neighbours tie, a sample scores the fraction of them
/// that share its label.
pub fn one_nna_from(
    d_rr: &PairwiseDistances,
    d_gg: &PairwiseDistances,
    d_rg: &PairwiseDistances,
) -> Result<OneNna> {
    let (nr, ng) = (d_rr.rows, d_gg.rows);
    if nr != ng {
        return Err(MetricsError::SizeMismatch(nr, ng));
    }
    if nr < 2 {
        return Err(MetricsError::TooFew(nr));
    }
    let score = |same: &dyn Fn(usize) -> f64, cross: &dyn Fn(usize) -> f64, n_same, n_cross, me| {
        let mut best = f64::INFINITY;
        let (mut n_s, mut n_c) = (0usize, 0usize);
        let mut visit = |v: f64, is_same: bool| {
            if v < best {
                best = v;
                n_s = 0;
                n_c = 0;
            }
            if v == best {
                if is_same {
                    n_s += 1;
                } else {
                    n_c += 1;
                }
            }
        };
        for k in (0..n_same).filter(|&k| k != me) {
            visit(same(k), true);
        }
        for k in 0..n_cross {
            visit(cross(k), false);
        }
        n_s as f64 / (n_s + n_c) as f64
    };
    let mut correct = 0.0;
    for i in 0..nr {
        correct += score(&|k| d_rr.get(i, k), &|k| d_rg.get(i, k), nr, ng, i);
    }
    for j in 0..ng {
        correct += score(&|k| d_gg.get(j, k), &|k| d_rg.get(k, j), ng, nr, j);
    }
    Ok(OneNna {
        accuracy: correct / (nr + ng) as f64,
        degenerate: d_rg.matrix.contains(&0.0),
    })
}

pub fn one_nna(reference: &CloudSet, generated: &CloudSet, base: BaseDistance) -> Result<OneNna> {
    if reference.len() != generated.len() {
        return Err(MetricsError::SizeMismatch(reference.len(), generated.len()));
    }
    one_nna_from(
        &PairwiseDistances::within(reference, base)?,
        &PairwiseDistances::within(generated, base)?,
        &PairwiseDistances::compute(reference, generated, base)?,
    )
}

/// Raw metric values. `report_lines` applies the conventional display
/// scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_ref: usize,
    pub n_gen: usize,
    pub jsd: f64,
    pub jsd_clamped: usize,
    pub mmd_cd: f64,
    pub mmd_emd: f64,
    pub cov_cd: f64,
    pub cov_emd: f64,
    pub nna_cd: f64,
    pub nna_emd: f64,
    pub nna_cd_degenerate: bool,
    pub nna_emd_degenerate: bool,
}

impl MetricsReport {
    /// `metric.name = value` lines: JSD ×10², MMD-CD ×10⁴, MMD-EMD ×10²,
    /// COV and 1-NNA in percent.
    pub fn report_lines(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to String");
        line("sets.n_ref", self.n_ref.to_string());
        line("sets.n_gen", self.n_gen.to_string());
        line("jsd.x1e2", format!("{:.4}", self.jsd * 1e2));
        line("jsd.clamped_points", self.jsd_clamped.to_string());
        line("mmd_cd.x1e4", format!("{:.4}", self.mmd_cd * 1e4));
        line("mmd_emd.x1e2", format!("{:.4}", self.mmd_emd * 1e2));
        line("cov_cd.pct", format!("{:.2}", self.cov_cd * 1e2));
        line("cov_emd.pct", format!("{:.2}", self.cov_emd * 1e2));
        line("nna_cd.pct", format!("{:.2}", self.nna_cd * 1e2));
        line("nna_emd.pct", format!("{:.2}", self.nna_emd * 1e2));
        line("nna_cd.degenerate", self.nna_cd_degenerate.to_string());
        line("nna_emd.degenerate", self.nna_emd_degenerate.to_string());
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Normalizes every cloud into the unit cube, then computes all metrics.
/// Distance matrices are computed once per base distance and shared.
pub fn evaluate_generation(reference: &CloudSet, generated: &CloudSet) -> Result<MetricsReport> {
    if reference.len() != generated.len() {
        return Err(MetricsError::SizeMismatch(reference.len(), generated.len()));
    }
    let r = reference.normalized()?;
    let g = generated.normalized()?;
    let j = jsd(&r, &g, JSD_GRID_RES)?;
    let per_base = |base| -> Result<(f64, f64, OneNna)> {
        let rg = PairwiseDistances::compute(&r, &g, base)?;
        let nna = one_nna_from(
            &PairwiseDistances::within(&r, base)?,
            &PairwiseDistances::within(&g, base)?,
            &rg,
        )?;
        Ok((mmd_from(&rg), coverage_from(&rg), nna))
    };
    let (mmd_cd, cov_cd, nna_cd) = per_base(BaseDistance::Cd)?;
    let (mmd_emd, cov_emd, nna_emd) = per_base(BaseDistance::Emd)?;
    Ok(MetricsReport {
        n_ref: r.len(),
        n_gen: g.len(),
        jsd: j.value,
        jsd_clamped: j.clamped,
        mmd_cd,
        mmd_emd,
        cov_cd,
        cov_emd,
        nna_cd: nna_cd.accuracy,
        nna_emd: nna_emd.accuracy,
        nna_cd_degenerate: nna_cd.degenerate,
        nna_emd_degenerate: nna_emd.degenerate,
    })
}

#[cfg(test)]
mod tests;
