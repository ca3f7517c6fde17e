use super::*;
use crate::geomdist::chamfer;
use proptest::prelude::*;
use rand::Rng;
use std::collections::HashSet;
use std::path::Path;

fn cloud(pts: &[[f64; 3]]) -> PointCloud {
    PointCloud::new(pts.to_vec()).unwrap()
}

fn random_cloud(seed: u64, n: usize) -> PointCloud {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| [0; 3].map(|_| r.random_range(-3.0..5.0)))
            .collect(),
    )
    .unwrap()
}

fn f32_rounded(x: &PointCloud) -> PointCloud {
    x.map(|p| p.map(|v| v as f32 as f64)).unwrap()
}

#[test]
fn text_and_binary_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let x = random_cloud(1, 100);
    let t = dir.path().join("a.xyz");
    let b = dir.path().join("a.pcd");
    save_cloud(&t, &x, CloudFormat::Text).unwrap();
    save_cloud(&b, &x, CloudFormat::Binary).unwrap();
    let xt = load_cloud(&t).unwrap();
    let xb = load_cloud(&b).unwrap();
    assert_eq!(xt, f32_rounded(&x));
    assert_eq!(xb, f32_rounded(&x));
    assert_eq!(chamfer(&xt, &xb), 0.0);
    // reloaded files re-save byte-identically
    let t2 = dir.path().join("b.xyz");
    save_cloud(&t2, &xt, CloudFormat::Text).unwrap();
    assert_eq!(std::fs::read(&t).unwrap(), std::fs::read(&t2).unwrap());
}

#[test]
fn format_from_extension() {
    assert_eq!(CloudFormat::from_path(Path::new("x/y.xyz")), CloudFormat::Text);
    assert_eq!(CloudFormat::from_path(Path::new("x/y.pcd")), CloudFormat::Binary);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.xyz");
    std::fs::write(&p, "").unwrap();
    assert!(matches!(load_cloud(&p), Err(DataError::Parse { .. })));
    std::fs::write(&p, "1 2 3\n1 2\n").unwrap();
    assert!(matches!(load_cloud(&p), Err(DataError::Parse { line: 2, .. })));
    std::fs::write(&p, "1 2 x\n").unwrap();
    assert!(matches!(load_cloud(&p), Err(DataError::Parse { line: 1, .. })));
    std::fs::write(&p, "1 2 inf\n").unwrap();
    assert!(matches!(load_cloud(&p), Err(DataError::Parse { .. })));

    let mut bytes = b"PCD1".to_vec();
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 12]);
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(
        load_cloud(&p),
        Err(DataError::CountMismatch {
            declared: 2,
            found: 1,
            ..
        })
    ));
    assert!(matches!(
        load_cloud(&dir.path().join("missing.xyz")),
        Err(DataError::Io { .. })
    ));
}

#[test]
fn normalize_examples() {
    let x = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
    let (y, rec) = normalize_unit_cube(&x).unwrap();
    assert_eq!(rec.center, [1.0, 0.0, 0.0]);
    assert_eq!(rec.scale, 1.0);
    assert_eq!(y.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);

    let tight = cloud(&[[-1.0, -0.5, 0.2], [1.0, 0.5, -0.2], [0.0, 0.1, 0.0]]);
    let (y, rec) = normalize_unit_cube(&tight).unwrap();
    assert_eq!(rec, NormalizationRecord::IDENTITY);
    assert_eq!(y, tight);
    assert_eq!(denormalize(&tight, &NormalizationRecord::IDENTITY).unwrap(), tight);
}

#[test]
fn normalize_errors() {
    let x = cloud(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
    assert!(matches!(normalize_unit_cube(&x), Err(DataError::ZeroExtent)));
    let bad = NormalizationRecord {
        center: [0.0; 3],
        scale: 0.0,
    };
    assert!(matches!(denormalize(&x, &bad), Err(DataError::BadScale(_))));
}

#[test]
fn sample_points_modes() {
    let x = random_cloud(2, 2048);
    let members: HashSet<[u64; 3]> = x.points().iter().map(|p| p.map(f64::to_bits)).collect();
    let s = sample_points(x.points(), 256, 7).unwrap();
    assert_eq!(s.len(), 256);
    assert!(s.points().iter().all(|p| members.contains(&p.map(f64::to_bits))));
    let distinct: HashSet<[u64; 3]> = s.points().iter().map(|p| p.map(f64::to_bits)).collect();
    assert_eq!(distinct.len(), 256);
    assert_eq!(s, sample_points(x.points(), 256, 7).unwrap());

    let small = random_cloud(3, 10);
    let perm = sample_points(small.points(), 10, 1).unwrap();
    let mut a: Vec<_> = small.points().iter().map(|p| p.map(f64::to_bits)).collect();
    let mut b: Vec<_> = perm.points().iter().map(|p| p.map(f64::to_bits)).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);

    let up = sample_points(small.points(), 50, 1).unwrap();
    assert_eq!(up.len(), 50);
    assert!(matches!(sample_points(&[], 5, 0), Err(DataError::EmptySource)));
}

#[test]
fn split_examples() {
    let entries: Vec<(String, String)> = (0..100).map(|i| (format!("c{i}.xyz"), "a".into())).collect();
    let m = split_manifest(&entries, 3);
    assert_eq!(m.split(Split::Train).count(), 85);
    assert_eq!(m.split(Split::Test).count(), 15);
    assert_eq!(m, split_manifest(&entries, 3));

    let one = split_manifest(&[("x".into(), "b".into())], 0);
    assert_eq!(one.entries[0].split, Split::Train);
}

#[test]
fn split_partitions_per_category() {
    let mut entries = Vec::new();
    for (cat, n) in [("a", 7), ("b", 33), ("c", 1)] {
        for i in 0..n {
            entries.push((format!("{cat}{i}"), cat.to_string()));
        }
    }
    let m = split_manifest(&entries, 11);
    let all: HashSet<&str> = m.entries.iter().map(|e| e.path.as_str()).collect();
    assert_eq!(all.len(), entries.len());
    for (cat, n) in [("a", 7usize), ("b", 33), ("c", 1)] {
        let train = m
            .split(Split::Train)
            .filter(|e| e.category == cat)
            .count();
        let exact = 0.85 * n as f64;
        assert!((train as f64 - exact).abs() <= 1.0, "{cat}: {train} vs {exact}");
    }
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let entries: Vec<(String, String)> = (0..9).map(|i| (format!("d/{i}.xyz"), format!("k{}", i % 2))).collect();
    let m = split_manifest(&entries, 5);
    let p = dir.path().join("manifest.tsv");
    save_manifest(&p, &m).unwrap();
    assert_eq!(load_manifest(&p).unwrap(), m);
}

#[test]
fn sphere_surface_constraint() {
    let params = ShapeParams::Sphere {
        center: [0.1, -0.2, 0.3],
        radius: 1.0,
    };
    let x = synth_shape(&params, 500, 1, 0.0).unwrap();
    for p in x.points() {
        let r = ((p[0] - 0.1).powi(2) + (p[1] + 0.2).powi(2) + (p[2] - 0.3).powi(2)).sqrt();
        assert!((r - 1.0).abs() < 1e-6);
    }
}

fn box_face(p: &[f64; 3], half: [f64; 3]) -> usize {
    let on: Vec<usize> = (0..6)
        .filter(|&f| {
            let k = f / 2;
            let s = if f % 2 == 0 { 1.0 } else { -1.0 };
            p[k] == s * half[k]
        })
        .collect();
    assert_eq!(on.len(), 1, "point {p:?} not on exactly one face");
    on[0]
}

#[test]
fn box_points_on_faces_with_area_uniformity() {
    let half = [0.3, 0.6, 0.9];
    let params = ShapeParams::Box {
        center: [0.0; 3],
        half,
    };
    let n = 10_000;
    let x = synth_shape(&params, n, 2, 0.0).unwrap();
    let mut counts = [0usize; 6];
    for p in x.points() {
        counts[box_face(p, half)] += 1;
    }
    let areas = [0, 0, 1, 1, 2, 2].map(|k| {
        let (a, b) = match k {
            0 => (half[1], half[2]),
            1 => (half[0], half[2]),
            _ => (half[0], half[1]),
        };
        a * b
    });
    let total: f64 = areas.iter().sum();
    let chi2: f64 = counts
        .iter()
        .zip(&areas)
        .map(|(&c, &a)| {
            let e = n as f64 * a / total;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 5 degrees of freedom, p = 0.001
    assert!(chi2 < 20.52, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn cylinder_area_split() {
    let params = ShapeParams::Cylinder {
        center: [0.0; 3],
        radius: 0.5,
        half_height: 0.5,
    };
    let n = 10_000;
    let x = synth_shape(&params, n, 3, 0.0).unwrap();
    let caps = x.points().iter().filter(|p| p[1].abs() == 0.5).count();
    // caps: 2πr² = 0.5π, side: 4πrh = π
    let expect = n as f64 / 3.0;
    let sd = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    assert!((caps as f64 - expect).abs() < 4.0 * sd, "{caps}");
    for p in x.points() {
        let r = (p[0] * p[0] + p[2] * p[2]).sqrt();
        assert!(p[1].abs() == 0.5 || (r - 0.5).abs() < 1e-12);
    }
}

#[test]
fn toy_plane_points_on_union_surface() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let params = ShapeParams::random(ShapeFamily::ToyPlane, &mut r);
    let ShapeParams::ToyPlane {
        fuselage,
        wing,
        wing_offset,
    } = params
    else {
        unreachable!()
    };
    let x = synth_shape(&params, 2000, 4, 0.0).unwrap();
    let level = |p: &[f64; 3], c: [f64; 3], ax: [f64; 3]| {
        (0..3).map(|k| ((p[k] - c[k]) / ax[k]).powi(2)).sum::<f64>()
    };
    for p in x.points() {
        let a = level(p, [0.0; 3], fuselage);
        let b = level(p, [wing_offset, 0.0, 0.0], wing);
        let on_a = (a - 1.0).abs() < 1e-9 && b >= 1.0;
        let on_b = (b - 1.0).abs() < 1e-9 && a >= 1.0;
        assert!(on_a || on_b);
    }
}

#[test]
fn synth_is_deterministic_and_validated() {
    for fam in ShapeFamily::ALL {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let p = ShapeParams::random(fam, &mut r);
        assert_eq!(p.family(), fam);
        assert_eq!(synth_shape(&p, 64, 1, 0.01).unwrap(), synth_shape(&p, 64, 1, 0.01).unwrap());
        assert_eq!(fam.to_string().parse::<ShapeFamily>().unwrap(), fam);
    }
    assert!(matches!("cone".parse::<ShapeFamily>(), Err(DataError::InvalidFamily(_))));
    let bad = ShapeParams::Sphere {
        center: [0.0; 3],
        radius: -1.0,
    };
    assert!(matches!(synth_shape(&bad, 4, 0, 0.0), Err(DataError::BadParams(_))));
    let ds = synth_dataset(&ShapeFamily::ALL, 3, 32, 5, 0.0).unwrap();
    assert_eq!(ds.len(), 12);
    assert_eq!(ds, synth_dataset(&ShapeFamily::ALL, 3, 32, 5, 0.0).unwrap());
}

#[test]
fn rotation_examples() {
    let x = random_cloud(5, 50);
    assert_eq!(rotate_gravity_axis(&x, 0.0), x);
    let full = rotate_gravity_axis(&x, 2.0 * std::f64::consts::PI);
    for (a, b) in x.points().iter().zip(full.points()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-9);
        }
    }
    let q = rotate_gravity_axis(&cloud(&[[1.0, 2.0, 0.0]]), std::f64::consts::FRAC_PI_2);
    let p = q.points()[0];
    assert!((p[0]).abs() < 1e-15 && p[1] == 2.0 && (p[2] + 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_round_trip(seed in any::<u64>(), n in 2usize..64) {
        let x = random_cloud(seed, n);
        let (y, rec) = normalize_unit_cube(&x).unwrap();
        let m = y.points().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(m <= 1.0);
        prop_assert!((m - 1.0).abs() < 1e-12);
        let back = denormalize(&y, &rec).unwrap();
        for (a, b) in x.points().iter().zip(back.points()) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn random_record_round_trip(
        c in prop::array::uniform3(-10.0f64..10.0),
        s in 0.01f64..10.0,
        seed in any::<u64>(),
    ) {
        let x = random_cloud(seed, 20);
        let rec = NormalizationRecord { center: c, scale: s };
        let y = denormalize(&x, &rec).unwrap();
        let inv = x.map(|p| p).unwrap();
        let back = y.map(|p| [0, 1, 2].map(|k| (p[k] - c[k]) / s)).unwrap();
        for (a, b) in inv.points().iter().zip(back.points()) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rotation_preserves_norms(seed in any::<u64>(), angle in -10.0f64..10.0) {
        let x = random_cloud(seed, 16);
        let y = rotate_gravity_axis(&x, angle);
        for (a, b) in x.points().iter().zip(y.points()) {
            let na = a.iter().map(|v| v * v).sum::<f64>();
            let nb = b.iter().map(|v| v * v).sum::<f64>();
            prop_assert!((na - nb).abs() < 1e-9 * na.max(1.0));
        }
    }
}

fn latent_fixture() -> (crate::model::StarNet, Vec<(String, PointCloud)>) {
    let cfg = crate::model::ModelConfig {
        latent_dim: 8,
        enc_widths: vec![8, 16],
        dec_widths: vec![8],
        disc_widths: vec![8],
        disc_fc: 8,
        points: 16,
        ..crate::model::ModelConfig::default()
    };
    let net = crate::model::StarNet::new(&cfg, 3).unwrap();
    let clouds = synth_dataset(&ShapeFamily::ALL, 2, 40, 8, 0.0)
        .unwrap()
        .into_iter()
        .map(|(f, c)| (f.to_string(), c))
        .collect();
    (net, clouds)
}

#[test]
fn latent_export_has_one_row_per_cloud_and_round_trips() {
    let (net, clouds) = latent_fixture();
    let rows = export_latents(&net.encoder, &clouds).unwrap();
    assert_eq!(rows.len(), clouds.len());
    assert!(rows.iter().all(|r| r.values.len() == 8));
    assert_eq!(rows[0].label, "sphere");
    assert_eq!(export_latents(&net.encoder, &clouds).unwrap(), rows);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("latents.tsv");
    save_latent_table(&path, &rows).unwrap();
    assert_eq!(load_latent_table(&path).unwrap(), rows);
    let bad = vec![LatentRow {
        label: "a\tb".into(),
        values: vec![1.0],
    }];
    assert!(save_latent_table(&path, &bad).is_err());
}

#[test]
fn latent_rows_ignore_point_order() {
    let (net, clouds) = latent_fixture();
    let rows = export_latents(&net.encoder, &clouds).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let shuffled: Vec<(String, PointCloud)> = clouds
        .iter()
        .map(|(l, c)| {
            let mut perm: Vec<usize> = (0..c.len()).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
            (l.clone(), c.permuted(&perm))
        })
        .collect();
    let again = export_latents(&net.encoder, &shuffled).unwrap();
    for (a, b) in rows.iter().zip(&again) {
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}
