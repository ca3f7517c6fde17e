use super::*;
use crate::data::{synth_dataset, ShapeFamily};
use crate::testutil::rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashMap};

fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [0; 3].map(|_| r.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

fn random_set(r: &mut ChaCha8Rng, m: usize, n: usize, label: &str) -> CloudSet {
    CloudSet::new((0..m).map(|_| random_cloud(r, n)).collect(), label).unwrap()
}

fn shifted(c: &PointCloud, dx: f64) -> PointCloud {
    c.map(|p| [p[0] + dx, p[1], p[2]]).unwrap()
}

fn brute_jsd(a: &CloudSet, b: &CloudSet, res: usize) -> f64 {
    let bins = |s: &CloudSet| {
        let mut h: HashMap<[usize; 3], f64> = HashMap::new();
        let mut n = 0.0;
        for c in s.clouds() {
            for p in c.points() {
                let idx = p.map(|v| {
                    let mut k = 0;
                    while k + 1 < res && v >= -1.0 + 2.0 * (k + 1) as f64 / res as f64 {
                        k += 1;
                    }
                    k
                });
                *h.entry(idx).or_default() += 1.0;
                n += 1.0;
            }
        }
        h.values_mut().for_each(|v| *v /= n);
        h
    };
    let (p, q) = (bins(a), bins(b));
    let keys: BTreeSet<[usize; 3]> = p.keys().chain(q.keys()).copied().collect();
    let entropy = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        vals.filter(|&v| v > 0.0).map(|v| -v * v.log2()).sum()
    };
    let get = |h: &HashMap<[usize; 3], f64>, k| h.get(k).copied().unwrap_or(0.0);
    let hm = entropy(&mut keys.iter().map(|k| 0.5 * (get(&p, k) + get(&q, k))));
    let hp = entropy(&mut p.values().copied());
    let hq = entropy(&mut q.values().copied());
    hm - 0.5 * (hp + hq)
}

fn brute_mmd(a: &CloudSet, b: &CloudSet) -> f64 {
    let mut s = 0.0;
    for r in a.clouds() {
        let mut m = f64::INFINITY;
        for g in b.clouds() {
            m = m.min(chamfer(r, g));
        }
        s += m;
    }
    s / a.len() as f64
}

fn brute_cov(a: &CloudSet, b: &CloudSet) -> f64 {
    let mut matched = BTreeSet::new();
    for g in b.clouds() {
        let d: Vec<f64> = a.clouds().iter().map(|r| chamfer(g, r)).collect();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        matched.insert(d.iter().position(|&v| v == min).unwrap());
    }
    matched.len() as f64 / a.len() as f64
}

fn brute_nna(a: &CloudSet, b: &CloudSet) -> f64 {
    let all: Vec<(&PointCloud, u8)> = a
        .clouds()
        .iter()
        .map(|c| (c, 0))
        .chain(b.clouds().iter().map(|c| (c, 1)))
        .collect();
    let mut correct = 0;
    for (i, (c, l)) in all.iter().enumerate() {
        let mut others: Vec<(f64, u8)> = all
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, (o, lo))| (chamfer(c, o), *lo))
            .collect();
        others.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        if others[0].1 == *l {
            correct += 1;
        }
    }
    correct as f64 / all.len() as f64
}

#[test]
fn cloud_set_invariants() {
    assert!(matches!(CloudSet::new(vec![], "r"), Err(MetricsError::EmptySet(_))));
    let mut r = rng(1);
    let mixed = vec![random_cloud(&mut r, 4), random_cloud(&mut r, 5)];
    assert!(matches!(
        CloudSet::new(mixed, "g"),
        Err(MetricsError::NonUniform { .. })
    ));
}

#[test]
fn jsd_examples() {
    let mut r = rng(2);
    let s = random_set(&mut r, 4, 32, "r");
    assert_eq!(jsd(&s, &s, 28).unwrap().value, 0.0);

    let a = CloudSet::new(vec![PointCloud::new(vec![[-0.9; 3]; 5]).unwrap()], "a").unwrap();
    let b = CloudSet::new(vec![PointCloud::new(vec![[0.9; 3]; 5]).unwrap()], "b").unwrap();
    assert_eq!(jsd(&a, &b, 28).unwrap().value, 1.0);
    assert!(matches!(jsd(&a, &b, 0), Err(MetricsError::BadGrid)));
}

#[test]
fn jsd_counts_clamped_points() {
    let a = CloudSet::new(
        vec![PointCloud::new(vec![[1.5, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap()],
        "a",
    )
    .unwrap();
    let j = jsd(&a, &a, 8).unwrap();
    assert_eq!(j.clamped, 2);
    assert_eq!(j.value, 0.0);
}

#[test]
fn jsd_matches_direct_summation() {
    let mut r = rng(3);
    for res in [4, 7, 28] {
        for _ in 0..10 {
            let a = random_set(&mut r, 3, 16, "r");
            let b = random_set(&mut r, 5, 16, "g");
            let v = jsd(&a, &b, res).unwrap().value;
            let o = brute_jsd(&a, &b, res);
            assert!((v - o).abs() < 1e-12, "res {res}: {v} vs {o}");
        }
    }
}

#[test]
fn mmd_examples() {
    let mut r = rng(4);
    let s = random_set(&mut r, 5, 16, "r");
    assert_eq!(mmd(&s, &s, BaseDistance::Cd).unwrap(), 0.0);
    assert_eq!(mmd(&s, &s, BaseDistance::Emd).unwrap(), 0.0);
    let one = CloudSet::new(vec![s.clouds()[0].clone()], "r").unwrap();
    let gen = CloudSet::new(
        vec![shifted(&s.clouds()[0], 10.0), s.clouds()[0].clone()],
        "g",
    )
    .unwrap();
    assert_eq!(mmd(&one, &gen, BaseDistance::Cd).unwrap(), 0.0);
}

#[test]
fn mmd_cov_nna_match_brute_force() {
    let mut r = rng(5);
    for _ in 0..10 {
        let a = random_set(&mut r, 5, 12, "r");
        let b = random_set(&mut r, 5, 12, "g");
        assert_eq!(mmd(&a, &b, BaseDistance::Cd).unwrap(), brute_mmd(&a, &b));
        let a6 = random_set(&mut r, 6, 10, "r");
        let b6 = random_set(&mut r, 6, 10, "g");
        assert_eq!(coverage(&a6, &b6, BaseDistance::Cd).unwrap(), brute_cov(&a6, &b6));
        let a4 = random_set(&mut r, 4, 8, "r");
        let b4 = random_set(&mut r, 4, 8, "g");
        let n = one_nna(&a4, &b4, BaseDistance::Cd).unwrap();
        assert_eq!(n.accuracy, brute_nna(&a4, &b4));
        assert!(!n.degenerate);
    }
}

#[test]
fn coverage_examples() {
    let mut r = rng(6);
    let s = random_set(&mut r, 6, 16, "r");
    assert_eq!(coverage(&s, &s, BaseDistance::Cd).unwrap(), 1.0);
    let collapsed = CloudSet::new(vec![s.clouds()[2].clone(); 6], "g").unwrap();
    assert_eq!(coverage(&s, &collapsed, BaseDistance::Cd).unwrap(), 1.0 / 6.0);
}

#[test]
fn one_nna_separated_clusters() {
    let mut r = rng(7);
    let a = random_set(&mut r, 6, 16, "r");
    let b = CloudSet::new(a.clouds().iter().map(|c| shifted(c, 50.0)).collect(), "g").unwrap();
    assert_eq!(one_nna(&a, &b, BaseDistance::Cd).unwrap().accuracy, 1.0);
    assert_eq!(one_nna(&a, &b, BaseDistance::Emd).unwrap().accuracy, 1.0);
}

#[test]
fn one_nna_errors_and_ties() {
    let mut r = rng(8);
    let a = random_set(&mut r, 3, 8, "r");
    let b = random_set(&mut r, 2, 8, "g");
    assert!(matches!(
        one_nna(&a, &b, BaseDistance::Cd),
        Err(MetricsError::SizeMismatch(3, 2))
    ));
    let one = random_set(&mut r, 1, 8, "r");
    assert!(matches!(
        one_nna(&one, &one, BaseDistance::Cd),
        Err(MetricsError::TooFew(1))
    ));
    // every sample ties between its twin in the other set and nothing else
    let n = one_nna(&a, &a, BaseDistance::Cd).unwrap();
    assert_eq!(n.accuracy, 0.0);
    assert!(n.degenerate);
    // duplicates on both sides: each sample has one same-label and one
    // cross-label neighbour at distance 0
    let dup = CloudSet::new(
        vec![a.clouds()[0].clone(), a.clouds()[0].clone(), a.clouds()[1].clone(), a.clouds()[1].clone()],
        "d",
    )
    .unwrap();
    let n = one_nna(&dup, &dup, BaseDistance::Cd).unwrap();
    assert!((n.accuracy - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn one_nna_same_distribution_near_half() {
    let mut total = 0.0;
    for seed in 0..20u64 {
        let clouds = synth_dataset(&[ShapeFamily::Sphere], 100, 32, seed, 0.0).unwrap();
        let mut clouds: Vec<PointCloud> = clouds.into_iter().map(|(_, c)| c).collect();
        let b = CloudSet::new(clouds.split_off(50), "g").unwrap();
        let a = CloudSet::new(clouds, "r").unwrap();
        total += one_nna(&a, &b, BaseDistance::Cd).unwrap().accuracy;
    }
    let mean = total / 20.0;
    assert!((mean - 0.5).abs() <= 0.1, "mean 1-NNA {mean}");
}

#[test]
fn evaluate_identical_sets() {
    let ds = synth_dataset(&ShapeFamily::ALL, 2, 64, 1, 0.0).unwrap();
    let s = CloudSet::new(ds.into_iter().map(|(_, c)| c).collect(), "r").unwrap();
    let rep = evaluate_generation(&s, &s).unwrap();
    assert_eq!(rep.jsd, 0.0);
    assert_eq!(rep.mmd_cd, 0.0);
    assert_eq!(rep.mmd_emd, 0.0);
    assert_eq!(rep.cov_cd, 1.0);
    assert_eq!(rep.cov_emd, 1.0);
    assert!(rep.nna_cd_degenerate && rep.nna_emd_degenerate);
    assert_eq!(MetricsReport::from_json(&rep.to_json()).unwrap(), rep);
    let lines = rep.report_lines();
    assert!(lines.contains("jsd.x1e2 = 0.0000\n"));
    assert!(lines.contains("cov_cd.pct = 100.00\n"));
    assert!(lines.lines().all(|l| l.split_once(" = ").is_some()));
}

#[test]
fn evaluate_sphere_vs_box_ordering() {
    let spheres: Vec<PointCloud> = synth_dataset(&[ShapeFamily::Sphere], 16, 128, 2, 0.0)
        .unwrap()
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let boxes: Vec<PointCloud> = synth_dataset(&[ShapeFamily::Box], 8, 128, 3, 0.0)
        .unwrap()
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let reference = CloudSet::new(spheres[..8].to_vec(), "r").unwrap();
    let same = CloudSet::new(spheres[8..].to_vec(), "g").unwrap();
    let other = CloudSet::new(boxes, "g").unwrap();
    let a = evaluate_generation(&reference, &same).unwrap();
    let b = evaluate_generation(&reference, &other).unwrap();
    assert!(a.jsd < b.jsd, "{} vs {}", a.jsd, b.jsd);
    assert!(matches!(
        evaluate_generation(&reference, &CloudSet::new(spheres[..3].to_vec(), "g").unwrap()),
        Err(MetricsError::SizeMismatch(8, 3))
    ));
}

#[test]
fn pairwise_matches_recomputation() {
    let mut r = rng(9);
    let a = random_set(&mut r, 4, 10, "r");
    let b = random_set(&mut r, 3, 10, "g");
    for base in [BaseDistance::Cd, BaseDistance::Emd] {
        let d = PairwiseDistances::compute(&a, &b, base).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(d.get(i, j), base.eval(&a.clouds()[i], &b.clouds()[j]).unwrap());
                assert!(d.get(i, j) >= 0.0);
            }
        }
        assert_eq!(d.transposed().transposed(), d);
    }
}

fn arb_set(m: usize, n: usize) -> impl Strategy<Value = CloudSet> {
    prop::collection::vec(
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), n),
        m,
    )
    .prop_map(|cs| CloudSet::new(cs.into_iter().map(|c| PointCloud::new(c).unwrap()).collect(), "s").unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn jsd_symmetric_and_bounded(a in arb_set(3, 8), b in arb_set(4, 8)) {
        let x = jsd(&a, &b, 6).unwrap().value;
        let y = jsd(&b, &a, 6).unwrap().value;
        prop_assert!((x - y).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn mmd_monotone_under_removal(a in arb_set(3, 6), b in arb_set(4, 6), k in 0usize..4) {
        let full = mmd(&a, &b, BaseDistance::Cd).unwrap();
        let mut fewer = b.clouds().to_vec();
        fewer.remove(k);
        let less = mmd(&a, &CloudSet::new(fewer, "g").unwrap(), BaseDistance::Cd).unwrap();
        prop_assert!(full <= less);
    }

    #[test]
    fn coverage_monotone_under_addition(a in arb_set(4, 6), b in arb_set(3, 6), extra in arb_set(1, 6)) {
        let before = coverage(&a, &b, BaseDistance::Cd).unwrap();
        let mut more = b.clouds().to_vec();
        more.push(extra.clouds()[0].clone());
        let after = coverage(&a, &CloudSet::new(more, "g").unwrap(), BaseDistance::Cd).unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn one_nna_swap_symmetric(a in arb_set(3, 6), b in arb_set(3, 6)) {
        let x = one_nna(&a, &b, BaseDistance::Cd).unwrap().accuracy;
        let y = one_nna(&b, &a, BaseDistance::Cd).unwrap().accuracy;
        prop_assert_eq!(x, y);
    }

    #[test]
    fn metrics_invariant_under_reordering(a in arb_set(4, 6), b in arb_set(4, 6), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut pa = a.clouds().to_vec();
        let mut pb = b.clouds().to_vec();
        pa.shuffle(&mut r);
        pb.shuffle(&mut r);
        let (sa, sb) = (CloudSet::new(pa, "r").unwrap(), CloudSet::new(pb, "g").unwrap());
        let base = BaseDistance::Cd;
        prop_assert!((jsd(&a, &b, 5).unwrap().value - jsd(&sa, &sb, 5).unwrap().value).abs() < 1e-12);
        prop_assert!((mmd(&a, &b, base).unwrap() - mmd(&sa, &sb, base).unwrap()).abs() < 1e-12);
        prop_assert_eq!(coverage(&a, &b, base).unwrap(), coverage(&sa, &sb, base).unwrap());
        prop_assert_eq!(one_nna(&a, &b, base).unwrap().accuracy, one_nna(&sa, &sb, base).unwrap().accuracy);
    }
}
