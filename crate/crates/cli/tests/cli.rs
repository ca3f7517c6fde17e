use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use starnet::data::{load_cloud, load_latent_table, load_manifest, Split};
use starnet::geomdist::chamfer;
use starnet::training::load_checkpoint;

const TINY: &str = "\
points = 64
latent_dim = 16
enc_widths = 8,16,32
dec_widths = 8,16,32
disc_widths = 8,16
disc_fc = 16
ae_batch = 8
ae_epochs = 4
ae_decay_epoch = 3
gan_batch = 8
gan_epochs = 2
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starnet"))
        .args(args)
        .env("RUST_LOG", "info")
        .env_remove("STARNET_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(per_family: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("tiny.cfg"), TINY).unwrap();
        ok(&[
            "make-synthetic",
            "--out",
            s(&root.join("ds")),
            "--count-per-family",
            &per_family.to_string(),
            "--points",
            "64",
            "--seed",
            "5",
        ]);
        Fixture { _dir: dir, root }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn manifest(&self) -> PathBuf {
        self.p("ds/manifest.tsv")
    }

    fn train_ae(&self) -> PathBuf {
        let out = self.p("ae.ckpt");
        ok(&[
            "train-ae",
            "--data",
            s(&self.manifest()),
            "--config",
            s(&self.p("tiny.cfg")),
            "--out",
            s(&out),
        ]);
        out
    }

    fn train_gan(&self, ae: &Path) -> PathBuf {
        let out = self.p("gan.ckpt");
        ok(&[
            "train-gan",
            "--data",
            s(&self.manifest()),
            "--ae-checkpoint",
            s(ae),
            "--config",
            s(&self.p("tiny.cfg")),
            "--out",
            s(&out),
        ]);
        out
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn make_synthetic_writes_split_dataset_deterministically() {
    let f = Fixture::new(20);
    let m = load_manifest(&f.manifest()).unwrap();
    assert_eq!(m.entries.len(), 80);
    assert_eq!(m.split(Split::Train).count(), 68);
    assert_eq!(m.split(Split::Test).count(), 12);
    assert_eq!(walk(&f.p("ds/clouds")).len(), 80);

    ok(&["make-synthetic", "--out", s(&f.p("again")), "--count-per-family", "20", "--points", "64", "--seed", "5"]);
    assert_eq!(dir_bytes(&f.p("ds")), dir_bytes(&f.p("again")));

    let bad = run(&["make-synthetic", "--out", s(&f.p("bad")), "--families", "sphere,cube"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("cube"));
}

#[test]
fn train_ae_logs_checkpoints_and_resumes() {
    let f = Fixture::new(4);
    let ae = f.train_ae();
    let ck = load_checkpoint(&ae).unwrap();
    assert_eq!(ck.completed_epochs(), 4);
    let log = fs::read_to_string(f.p("ae.ckpt.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,cd,emd,lr,seconds");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("3,"));

    let out = ok(&[
        "train-ae",
        "--data",
        s(&f.manifest()),
        "--config",
        s(&f.p("tiny.cfg")),
        "--set",
        "ae_epochs=6",
        "--resume",
        s(&ae),
        "--out",
        s(&ae),
    ]);
    assert!(stderr(&out).contains("resolved config"));
    let log = fs::read_to_string(f.p("ae.ckpt.csv")).unwrap();
    let epochs: Vec<&str> = log.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "1", "2", "3", "4", "5"]);
    assert_eq!(load_checkpoint(&ae).unwrap().completed_epochs(), 6);
}

#[test]
fn missing_inputs_fail_with_one_line_errors() {
    let f = Fixture::new(2);
    let (missing, man, x, y, nock) = (
        f.p("missing.tsv"),
        f.manifest(),
        f.p("x.ckpt"),
        f.p("y.ckpt"),
        f.p("missing.ckpt"),
    );
    let cases: [&[&str]; 3] = [
        &["train-ae", "--data", s(&missing), "--out", s(&x)],
        &["train-gan", "--data", s(&man), "--ae-checkpoint", s(&nock), "--out", s(&y)],
        &["train-ae", "--data", s(&man), "--set", "bogus=1", "--out", s(&x)],
    ];
    for args in cases {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err: Vec<&str> = std::str::from_utf8(&o.stderr)
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("error:"))
            .collect();
        assert_eq!(err.len(), 1, "{}", stderr(&o));
    }
}

#[test]
fn train_gan_keeps_decoder_and_rejects_wrong_stage() {
    let f = Fixture::new(4);
    let ae = f.train_ae();
    let gan = f.train_gan(&ae);
    let (a, g) = (load_checkpoint(&ae).unwrap(), load_checkpoint(&gan).unwrap());
    let dec = |c: &starnet::training::Checkpoint| {
        c.tensors
            .iter()
            .filter(|t| t.name.starts_with("dec."))
            .cloned()
            .collect::<Vec<_>>()
    };
    assert!(!dec(&a).is_empty());
    assert_eq!(dec(&a), dec(&g));
    assert!(g.tensors.iter().any(|t| t.name.starts_with("map.")));
    let log = fs::read_to_string(f.p("gan.ckpt.csv")).unwrap();
    assert!(log.starts_with("epoch,wasserstein,gp,g_loss,seconds\n"));
    assert_eq!(log.lines().count(), 3);

    let o = run(&["train-gan", "--data", s(&f.manifest()), "--ae-checkpoint", s(&gan), "--out", s(&f.p("z.ckpt"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("expected stage 1"));
}

#[test]
fn reconstruct_is_deterministic_with_configured_size() {
    let f = Fixture::new(4);
    let ae = f.train_ae();
    let input = f.p("ds/clouds/box_0000.xyz");
    for name in ["r1.xyz", "r2.xyz"] {
        ok(&["reconstruct", "--checkpoint", s(&ae), "--in", s(&input), "--out", s(&f.p(name))]);
    }
    assert_eq!(fs::read(f.p("r1.xyz")).unwrap(), fs::read(f.p("r2.xyz")).unwrap());
    assert_eq!(load_cloud(&f.p("r1.xyz")).unwrap().len(), 64);
    ok(&["reconstruct", "--checkpoint", s(&ae), "--in", s(&input), "--sample-n", "16", "--out", s(&f.p("r3.pcd"))]);
    assert_eq!(load_cloud(&f.p("r3.pcd")).unwrap().len(), 64);
}

#[test]
fn sparse_input_reconstruction_stays_close() {
    let f = Fixture::new(8);
    let ae = f.p("ae.ckpt");
    ok(&[
        "train-ae",
        "--data",
        s(&f.manifest()),
        "--config",
        s(&f.p("tiny.cfg")),
        "--set",
        "ae_epochs=30",
        "--set",
        "ae_decay_epoch=25",
        "--out",
        s(&ae),
    ]);
    let (mut full, mut sparse) = (0.0, 0.0);
    for fam in ["sphere", "box", "cylinder", "toy-plane"] {
        let input = f.p(&format!("ds/clouds/{fam}_0000.xyz"));
        let truth = load_cloud(&input).unwrap();
        ok(&["reconstruct", "--checkpoint", s(&ae), "--in", s(&input), "--out", s(&f.p("full.xyz"))]);
        ok(&["reconstruct", "--checkpoint", s(&ae), "--in", s(&input), "--sample-n", "16", "--out", s(&f.p("sparse.xyz"))]);
        full += chamfer(&load_cloud(&f.p("full.xyz")).unwrap(), &truth);
        sparse += chamfer(&load_cloud(&f.p("sparse.xyz")).unwrap(), &truth);
    }
    assert!(sparse < 2.0 * full, "sparse {sparse} vs full {full}");
}

#[test]
fn generate_writes_seeded_sets() {
    let f = Fixture::new(4);
    let gan = f.train_gan(&f.train_ae());
    for (dir, seed) in [("g1", "3"), ("g2", "3"), ("g3", "4")] {
        ok(&["generate", "--checkpoint", s(&gan), "--count", "5", "--seed", seed, "--out", s(&f.p(dir))]);
    }
    assert_eq!(walk(&f.p("g1")).len(), 5);
    assert_eq!(dir_bytes(&f.p("g1")), dir_bytes(&f.p("g2")));
    assert_ne!(dir_bytes(&f.p("g1")), dir_bytes(&f.p("g3")));
}

#[test]
fn seed_falls_back_to_environment() {
    let f = Fixture::new(2);
    let gan = f.train_gan(&f.train_ae());
    let o = Command::new(env!("CARGO_BIN_EXE_starnet"))
        .args(["generate", "--checkpoint", s(&gan), "--count", "2", "--out", s(&f.p("g"))])
        .env("STARNET_SEED", "1234")
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    // A checkpoint's recorded seed outranks the environment.
    assert!(stderr(&o).contains("seed = 0"));
    let o = Command::new(env!("CARGO_BIN_EXE_starnet"))
        .args(["evaluate", "--ref", s(&f.p("g")), "--gen", s(&f.p("g")), "--out", s(&f.p("r.txt"))])
        .env("STARNET_SEED", "1234")
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stderr(&o).contains("seed = 1234"));
}

#[test]
fn interpolate_endpoints_and_alpha_parsing() {
    let f = Fixture::new(4);
    let ae = f.train_ae();
    let (src, tgt) = (f.p("ds/clouds/box_0001.xyz"), f.p("ds/clouds/sphere_0002.xyz"));
    ok(&["interpolate", "--checkpoint", s(&ae), "--source", s(&src), "--target", s(&tgt), "--out", s(&f.p("i"))]);
    let mut names: Vec<String> = walk(&f.p("i"))
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 10);
    assert!(names.contains(&"interp_-0.40.xyz".to_string()));
    assert!(names.contains(&"interp_+1.40.xyz".to_string()));
    for (alpha, cloud) in [("+0.00", &src), ("+1.00", &tgt)] {
        ok(&["reconstruct", "--checkpoint", s(&ae), "--in", s(cloud), "--out", s(&f.p("rec.xyz"))]);
        assert_eq!(
            fs::read(f.p(&format!("i/interp_{alpha}.xyz"))).unwrap(),
            fs::read(f.p("rec.xyz")).unwrap()
        );
    }
    let o = run(&["interpolate", "--checkpoint", s(&ae), "--source", s(&src), "--target", s(&tgt), "--alphas", "0,half", "--out", s(&f.p("j"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("half"));
}

#[test]
fn evaluate_reports_all_metrics() {
    let f = Fixture::new(20);
    let o = ok(&["evaluate", "--ref", s(&f.manifest()), "--gen", s(&f.p("ds/clouds")), "--out", s(&f.p("rep.txt"))]);
    assert!(stderr(&o).contains("truncating"));

    let same = f.p("ds/clouds");
    ok(&["evaluate", "--ref", s(&same), "--gen", s(&same), "--out", s(&f.p("same.txt"))]);
    let rep = fs::read_to_string(f.p("same.txt")).unwrap();
    for key in ["jsd.x1e2", "mmd_cd.x1e4", "mmd_emd.x1e2", "cov_cd.pct", "cov_emd.pct", "nna_cd.pct", "nna_emd.pct"] {
        assert!(rep.contains(&format!("{key} = ")), "missing {key}");
    }
    assert!(rep.contains("jsd.x1e2 = 0.0000"));
    assert!(rep.contains("cov_cd.pct = 100.00"));
    let json = rep.split("# json\n").nth(1).unwrap();
    let parsed = starnet::genmetrics::MetricsReport::from_json(json).unwrap();
    assert_eq!(parsed.n_ref, 80);
    assert_eq!(parsed.jsd, 0.0);
}

#[test]
fn export_latents_writes_one_row_per_cloud() {
    let f = Fixture::new(3);
    let ae = f.train_ae();
    ok(&["export-latents", "--checkpoint", s(&ae), "--data", s(&f.manifest()), "--out", s(&f.p("z.tsv"))]);
    let rows = load_latent_table(&f.p("z.tsv")).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.values.len() == 16));
}
