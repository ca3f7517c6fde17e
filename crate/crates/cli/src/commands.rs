use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use starnet::config::RunConfig;
use starnet::data::{
    load_cloud, sample_points, save_cloud, save_manifest, save_latent_table, split_manifest,
    synth_dataset, CloudFormat, ShapeFamily, Split,
};
use starnet::genmetrics::{evaluate_generation, CloudSet};
use starnet::geomdist::PointCloud;
use starnet::model::StarNet;
use starnet::pipeline::{
    cloud_files, default_alphas, generate_clouds, interpolate_clouds, load_manifest_clouds,
    parse_alphas, reconstruct_cloud, resample_all,
};
use starnet::training::{
    decoder_fingerprint, load_checkpoint, mapper_params, save_checkpoint, train_ae_epoch,
    train_gan_epoch, AdamState, AutoEncoder, Checkpoint, Critic, GanOptimizers, Stage,
    TrainError, TrainSet,
};

use crate::ConfigArgs;

const SEED_ENV: &str = "STARNET_SEED";

/// File, then `--set` overrides, then the seed fallback chain. With a
/// checkpoint base, its stored values stand in for the profile defaults and
/// its seed wins over the environment.
fn resolve_config(args: &ConfigArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let from_ckpt = base.is_some();
    let mut cfg = match (&args.config, base) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in config {}", path.display()))?
        }
        (Some(path), Some(mut base)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            let file = RunConfig::parse(&text).with_context(|| format!("in config {}", path.display()))?;
            for (k, v) in file.overrides() {
                base.set(k, v)?;
            }
            base
        }
        (None, Some(base)) => base,
        (None, None) => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    } else if !from_ckpt && !cfg.is_set("seed") {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.set("seed", v.trim())
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer"))?;
        }
    }
    info!("resolved config:\n{}", cfg.to_text().trim_end());
    info!("seed = {}", cfg.seed()?);
    Ok(cfg)
}

fn load_stage(path: &Path, expected: Option<Stage>) -> Result<Checkpoint> {
    let ck = load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    if let Some(stage) = expected {
        if ck.stage != stage {
            return Err(TrainError::StageMismatch {
                found: ck.stage as u8,
                expected: stage as u8,
            })
            .with_context(|| format!("checkpoint {}", path.display()));
        }
    }
    Ok(ck)
}

fn append_csv(path: &Path, header: &str, line: &str) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("cannot open log {}", path.display()))?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{line}")?;
    Ok(())
}

fn default_log(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".csv");
    PathBuf::from(s)
}

fn training_set(manifest: &Path, points: usize, seed: u64) -> Result<TrainSet> {
    let clouds: Vec<PointCloud> = load_manifest_clouds(manifest, Some(Split::Train))?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let clouds = resample_all(&clouds, points, seed)?;
    info!("loaded {} training clouds of {points} points", clouds.len());
    Ok(TrainSet::from_raw(&clouds)?)
}

fn param_names(net: &StarNet, prefixes: &[&str]) -> Vec<String> {
    let nt = net.named_tensors();
    prefixes
        .iter()
        .flat_map(|p| nt.filtered(p).params.into_iter().map(|(n, _)| n))
        .collect()
}

pub fn make_synthetic(
    out: &Path,
    families: &[ShapeFamily],
    per_family: usize,
    points: usize,
    seed: u64,
    jitter: f64,
    binary: bool,
) -> Result<()> {
    ensure!(!families.is_empty(), "at least one family is required");
    info!("seed = {seed}");
    let clouds = synth_dataset(families, per_family, points, seed, jitter)?;
    let ext = if binary { "pcd" } else { "xyz" };
    let mut counters = std::collections::BTreeMap::new();
    let mut entries = Vec::new();
    for (fam, cloud) in &clouds {
        let k = counters.entry(fam.to_string()).or_insert(0usize);
        let rel = format!("clouds/{fam}_{k:04}.{ext}");
        *k += 1;
        let path = out.join(&rel);
        save_cloud(&path, cloud, CloudFormat::from_path(&path))?;
        entries.push((rel, fam.to_string()));
    }
    let manifest = split_manifest(&entries, seed);
    save_manifest(&out.join("manifest.tsv"), &manifest)?;
    let n_train = manifest.split(Split::Train).count();
    info!(
        "wrote {} clouds ({n_train} train / {} test) to {}",
        clouds.len(),
        clouds.len() - n_train,
        out.display()
    );
    Ok(())
}

pub fn train_ae(
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    log: Option<PathBuf>,
    args: &ConfigArgs,
) -> Result<()> {
    let ck = resume.map(|p| load_stage(p, Some(Stage::AutoEncoder))).transpose()?;
    let cfg = resolve_config(args, ck.as_ref().map(Checkpoint::run_config).transpose()?)?;
    let seed = cfg.seed()?;
    let model_cfg = cfg.model_config()?;
    let s1 = cfg.stage_one()?;
    s1.validate()?;
    let set = training_set(data, model_cfg.points, seed)?;
    let (net, mut opt, start) = match &ck {
        Some(ck) => {
            let net = ck.build_model()?;
            let params = AutoEncoder::parameters(&net);
            let opt = ck
                .optimizer("ae", &params)?
                .unwrap_or_else(|| AdamState::new(&params, s1.lr, s1.betas));
            (net, opt, ck.completed_epochs())
        }
        None => {
            let net = StarNet::new(&model_cfg, seed)?;
            let opt = AdamState::new(&AutoEncoder::parameters(&net), s1.lr, s1.betas);
            (net, opt, 0)
        }
    };
    let names = param_names(&net, &["enc.", "dec."]);
    let log = log.unwrap_or_else(|| default_log(out));
    if start >= s1.epochs {
        warn!("checkpoint already has {start} of {} epochs; nothing to do", s1.epochs);
    }
    for epoch in start..s1.epochs {
        let st = match train_ae_epoch(&net, &set, &mut opt, &s1, epoch, seed) {
            Ok(st) => st,
            Err(e @ TrainError::NonFinite { .. }) => {
                return Err(e).with_context(|| {
                    format!("training aborted; last good checkpoint kept at {}", out.display())
                })
            }
            Err(e) => return Err(e.into()),
        };
        info!(
            "epoch {epoch}: cd {:.6e} emd {:.6e} lr {} ({:.2}s)",
            st.cd, st.emd, st.lr, st.seconds
        );
        append_csv(
            &log,
            "epoch,cd,emd,lr,seconds",
            &format!("{},{},{},{},{:.3}", epoch, st.cd, st.emd, st.lr, st.seconds),
        )?;
        let mut ck = Checkpoint::capture(Stage::AutoEncoder, &net, &cfg, epoch + 1);
        ck.add_optimizer("ae", &opt, &names);
        save_checkpoint(out, &ck)?;
    }
    info!("stage-1 checkpoint at {}", out.display());
    Ok(())
}

pub fn train_gan(
    data: &Path,
    ae_checkpoint: &Path,
    out: &Path,
    log: Option<PathBuf>,
    args: &ConfigArgs,
) -> Result<()> {
    let ck = load_stage(ae_checkpoint, Some(Stage::AutoEncoder))?;
    let cfg = resolve_config(args, Some(ck.run_config()?))?;
    let seed = cfg.seed()?;
    let s2 = cfg.stage_two()?;
    s2.validate()?;
    let net = ck.build_model()?;
    let set = training_set(data, net.config.points, seed)?;
    let before = decoder_fingerprint(&net.decoder);
    let decoder = net.decoder.frozen_copy();
    let mut opt = GanOptimizers::new(&net.mapper, &net.discriminator, &s2);
    let map_names = param_names(&net, &["map."]);
    let disc_names = param_names(&net, &["disc."]);
    debug_assert_eq!(map_names.len(), mapper_params(&net.mapper).len());
    debug_assert_eq!(disc_names.len(), Critic::parameters(&net.discriminator).len());
    let log = log.unwrap_or_else(|| default_log(out));
    for epoch in 0..s2.epochs {
        let st = train_gan_epoch(
            &net.mapper,
            &decoder,
            &net.discriminator,
            &set.clouds,
            &mut opt,
            &s2,
            epoch,
            seed,
        )?;
        info!(
            "epoch {epoch}: wasserstein {:.6} gp {:.6} g_loss {:.6} ({:.2}s)",
            st.wasserstein, st.gp, st.g_loss, st.seconds
        );
        append_csv(
            &log,
            "epoch,wasserstein,gp,g_loss,seconds",
            &format!("{},{},{},{},{:.3}", epoch, st.wasserstein, st.gp, st.g_loss, st.seconds),
        )?;
        if decoder_fingerprint(&net.decoder) != before {
            bail!("decoder changed during stage 2");
        }
        let mut c = Checkpoint::capture(Stage::Gan, &net, &cfg, epoch + 1);
        c.add_optimizer("map", &opt.mapper, &map_names);
        c.add_optimizer("disc", &opt.critic, &disc_names);
        save_checkpoint(out, &c)?;
    }
    info!("decoder unchanged; stage-2 checkpoint at {}", out.display());
    Ok(())
}

pub fn reconstruct(
    checkpoint: &Path,
    input: &Path,
    sample_n: Option<usize>,
    out: &Path,
    args: &ConfigArgs,
) -> Result<()> {
    let ck = load_stage(checkpoint, None)?;
    let cfg = resolve_config(args, Some(ck.run_config()?))?;
    let net = ck.build_model()?;
    let mut x = load_cloud(input)?;
    if let Some(n) = sample_n {
        x = sample_points(x.points(), n, cfg.seed()?)?;
    }
    let y = reconstruct_cloud(&net, &x)?;
    save_cloud(out, &y, CloudFormat::from_path(out))?;
    info!("{} input points -> {} points at {}", x.len(), y.len(), out.display());
    Ok(())
}

pub fn generate(checkpoint: &Path, count: usize, out: &Path, args: &ConfigArgs) -> Result<()> {
    ensure!(count > 0, "--count must be at least 1");
    let ck = load_stage(checkpoint, Some(Stage::Gan))?;
    let cfg = resolve_config(args, Some(ck.run_config()?))?;
    let net = ck.build_model()?;
    let clouds = generate_clouds(&net, count, cfg.seed()?)?;
    for (i, c) in clouds.iter().enumerate() {
        let path = out.join(format!("gen_{i:04}.xyz"));
        save_cloud(&path, c, CloudFormat::Text)?;
    }
    info!("wrote {count} clouds to {}", out.display());
    Ok(())
}

pub fn interpolate(
    checkpoint: &Path,
    source: &Path,
    target: &Path,
    alphas: Option<&str>,
    out: &Path,
    args: &ConfigArgs,
) -> Result<()> {
    let alphas = match alphas {
        Some(s) => parse_alphas(s)?,
        None => default_alphas(),
    };
    let ck = load_stage(checkpoint, None)?;
    resolve_config(args, Some(ck.run_config()?))?;
    let net = ck.build_model()?;
    let clouds = interpolate_clouds(&net, &load_cloud(source)?, &load_cloud(target)?, &alphas)?;
    for (a, c) in alphas.iter().zip(&clouds) {
        let path = out.join(format!("interp_{a:+.2}.xyz"));
        save_cloud(&path, c, CloudFormat::Text)?;
    }
    info!("wrote {} interpolants to {}", clouds.len(), out.display());
    Ok(())
}

/// Truncates or cycles `gen` to `n` clouds.
fn match_count(gen: Vec<PointCloud>, n: usize) -> Vec<PointCloud> {
    if gen.len() != n {
        warn!(
            "generated set has {} clouds, reference has {n}; {} to match",
            gen.len(),
            if gen.len() > n { "truncating" } else { "cycling" }
        );
    }
    gen.iter().cycle().take(n).cloned().collect()
}

pub fn evaluate(
    reference: &Path,
    gen_dir: &Path,
    out: &Path,
    split: Split,
    points: Option<usize>,
    args: &ConfigArgs,
) -> Result<()> {
    let cfg = resolve_config(args, None)?;
    let seed = cfg.seed()?;
    let refs: Vec<PointCloud> = if reference.is_dir() {
        cloud_files(reference)?
            .iter()
            .map(|p| load_cloud(p))
            .collect::<Result<_, _>>()?
    } else {
        load_manifest_clouds(reference, Some(split))?
            .into_iter()
            .map(|(_, c)| c)
            .collect()
    };
    let gens: Vec<PointCloud> = cloud_files(gen_dir)?
        .iter()
        .map(|p| load_cloud(p))
        .collect::<Result<_, _>>()?;
    let n_points = points.unwrap_or(gens[0].len());
    let gens = match_count(gens, refs.len());
    let r = CloudSet::new(resample_all(&refs, n_points, seed)?, "reference")?;
    let g = CloudSet::new(resample_all(&gens, n_points, seed)?, "generated")?;
    let report = evaluate_generation(&r, &g)?;
    let text = format!("{}\n# json\n{}\n", report.report_lines(), report.to_json());
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, &text).with_context(|| format!("cannot write {}", out.display()))?;
    print!("{}", report.report_lines());
    Ok(())
}

pub fn export_latents(checkpoint: &Path, data: &Path, out: &Path, split: Option<Split>) -> Result<()> {
    let ck = load_stage(checkpoint, None)?;
    let net = ck.build_model()?;
    let clouds = load_manifest_clouds(data, split)?;
    let rows = starnet::data::export_latents(&net.encoder, &clouds)?;
    save_latent_table(out, &rows)?;
    info!("wrote {} latent rows to {}", rows.len(), out.display());
    Ok(())
}
