use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::geomdist::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    Sphere,
    Box,
    Cylinder,
    ToyPlane,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] = [
        ShapeFamily::Sphere,
        ShapeFamily::Box,
        ShapeFamily::Cylinder,
        ShapeFamily::ToyPlane,
    ];
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeFamily::Sphere => "sphere",
            ShapeFamily::Box => "box",
            ShapeFamily::Cylinder => "cylinder",
            ShapeFamily::ToyPlane => "toy-plane",
        })
    }
}

impl FromStr for ShapeFamily {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        ShapeFamily::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| DataError::InvalidFamily(s.to_string()))
    }
}

/// Surface parameters. Ellipsoid semi-axes are listed as `[x, y, z]`;
/// the cylinder axis is y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ShapeParams {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half: [f64; 3],
    },
    Cylinder {
        center: [f64; 3],
        radius: f64,
        half_height: f64,
    },
    ToyPlane {
        fuselage: [f64; 3],
        wing: [f64; 3],
        wing_offset: f64,
    },
}

impl ShapeParams {
    pub fn family(&self) -> ShapeFamily {
        match self {
            ShapeParams::Sphere { .. } => ShapeFamily::Sphere,
            ShapeParams::Box { .. } => ShapeFamily::Box,
            ShapeParams::Cylinder { .. } => ShapeFamily::Cylinder,
            ShapeParams::ToyPlane { .. } => ShapeFamily::ToyPlane,
        }
    }

    /// A random member of the family, inside its parameter ranges.
    pub fn random(family: ShapeFamily, rng: &mut impl Rng) -> Self {
        let mut center = || [0; 3].map(|_| rng.random_range(-0.2..0.2));
        match family {
            ShapeFamily::Sphere => ShapeParams::Sphere {
                center: center(),
                radius: rng.random_range(0.3..1.0),
            },
            ShapeFamily::Box => ShapeParams::Box {
                center: center(),
                half: [0; 3].map(|_| rng.random_range(0.2..1.0)),
            },
            ShapeFamily::Cylinder => ShapeParams::Cylinder {
                center: center(),
                radius: rng.random_range(0.2..0.8),
                half_height: rng.random_range(0.3..1.0),
            },
            ShapeFamily::ToyPlane => ShapeParams::ToyPlane {
                fuselage: [
                    rng.random_range(0.8..1.0),
                    rng.random_range(0.1..0.2),
                    rng.random_range(0.1..0.2),
                ],
                wing: [
                    rng.random_range(0.15..0.3),
                    rng.random_range(0.03..0.08),
                    rng.random_range(0.6..1.0),
                ],
                wing_offset: rng.random_range(-0.2..0.2),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0 && v <= 10.0;
        let ok = match self {
            ShapeParams::Sphere { center, radius } => center.iter().all(|c| c.is_finite()) && pos(*radius),
            ShapeParams::Box { center, half } => {
                center.iter().all(|c| c.is_finite()) && half.iter().all(|&h| pos(h))
            }
            ShapeParams::Cylinder {
                center,
                radius,
                half_height,
            } => center.iter().all(|c| c.is_finite()) && pos(*radius) && pos(*half_height),
            ShapeParams::ToyPlane {
                fuselage,
                wing,
                wing_offset,
            } => {
                fuselage.iter().chain(wing).all(|&v| pos(v))
                    && wing_offset.abs() < fuselage[0]
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DataError::BadParams(format!("{self:?}")))
        }
    }
}

/// `n` points distributed uniformly by area over the surface, plus isotropic
/// Gaussian jitter of standard deviation `jitter`.
pub fn synth_shape(params: &ShapeParams, n: usize, seed: u64, jitter: f64) -> Result<PointCloud> {
    params.validate()?;
    if n == 0 {
        return Err(DataError::BadParams("point count must be at least 1".into()));
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(DataError::BadParams(format!("jitter {jitter}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<[f64; 3]> = (0..n).map(|_| surface_point(params, &mut rng)).collect();
    if jitter > 0.0 {
        let noise = Normal::new(0.0, jitter).expect("valid sigma");
        for v in pts.iter_mut().flatten() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(PointCloud::new(pts)?)
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// One rejection-sampling proposal for an area-uniform point on an
/// axis-aligned ellipsoid, accepted with probability proportional to the
/// local area element of the sphere-to-ellipsoid map.
fn ellipsoid_proposal(axes: [f64; 3], rng: &mut impl Rng) -> Option<[f64; 3]> {
    let [a, b, c] = axes;
    let bound = 1.0 / a.min(b).min(c);
    let u = unit_vector(rng);
    let g = ((u[0] / a).powi(2) + (u[1] / b).powi(2) + (u[2] / c).powi(2)).sqrt();
    (rng.random::<f64>() * bound <= g).then(|| [a * u[0], b * u[1], c * u[2]])
}

fn inside_ellipsoid(p: [f64; 3], center: [f64; 3], axes: [f64; 3]) -> bool {
    (0..3)
        .map(|k| ((p[k] - center[k]) / axes[k]).powi(2))
        .sum::<f64>()
        < 1.0
}

fn surface_point(params: &ShapeParams, rng: &mut impl Rng) -> [f64; 3] {
    match *params {
        ShapeParams::Sphere { center, radius } => add(center, unit_vector(rng).map(|c| c * radius)),
        ShapeParams::Box { center, half } => {
            let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
            let total: f64 = areas.iter().sum();
            let mut t = rng.random::<f64>() * total;
            let mut axis = 2;
            for (k, &a) in areas.iter().enumerate() {
                if t < a {
                    axis = k;
                    break;
                }
                t -= a;
            }
            let mut p = half.map(|h| rng.random_range(-h..h));
            p[axis] = if rng.random::<bool>() { half[axis] } else { -half[axis] };
            add(center, p)
        }
        ShapeParams::Cylinder {
            center,
            radius,
            half_height,
        } => {
            let side = 2.0 * PI * radius * 2.0 * half_height;
            let cap = PI * radius * radius;
            let t = rng.random::<f64>() * (side + 2.0 * cap);
            let theta = rng.random_range(0.0..2.0 * PI);
            let p = if t < side {
                let y = rng.random_range(-half_height..half_height);
                [radius * theta.cos(), y, radius * theta.sin()]
            } else {
                let r = radius * rng.random::<f64>().sqrt();
                let y = if t < side + cap { half_height } else { -half_height };
                [r * theta.cos(), y, r * theta.sin()]
            };
            add(center, p)
        }
        ShapeParams::ToyPlane {
            fuselage,
            wing,
            wing_offset,
        } => {
            let parts = [([0.0; 3], fuselage), ([wing_offset, 0.0, 0.0], wing)];
            let weight = |ax: [f64; 3]| ax[0] * ax[1] * ax[2] / ax[0].min(ax[1]).min(ax[2]);
            let w0 = weight(fuselage);
            let w1 = weight(wing);
            loop {
                let k = usize::from(rng.random::<f64>() * (w0 + w1) >= w0);
                let (c, ax) = parts[k];
                let Some(p) = ellipsoid_proposal(ax, rng) else {
                    continue;
                };
                let p = add(c, p);
                let (oc, oax) = parts[1 - k];
                if !inside_ellipsoid(p, oc, oax) {
                    return p;
                }
            }
        }
    }
}

/// `per_family` random shapes from each listed family, `n` points each, with
/// shape parameters and sampling seeds derived from `seed`.
pub fn synth_dataset(
    families: &[ShapeFamily],
    per_family: usize,
    n: usize,
    seed: u64,
    jitter: f64,
) -> Result<Vec<(ShapeFamily, PointCloud)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(families.len() * per_family);
    for &fam in families {
        for _ in 0..per_family {
            let params = ShapeParams::random(fam, &mut rng);
            out.push((fam, synth_shape(&params, n, rng.random(), jitter)?));
        }
    }
    Ok(out)
}
