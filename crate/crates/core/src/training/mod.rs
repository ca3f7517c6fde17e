//! Adam, the learning-rate schedule, Stage 1 (auto-encoding) and Stage 2
//! (WGAN-GP on the mapping network with a frozen decoder), and checkpoints.

mod adam;
mod checkpoint;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{normalize_unit_cube, DataError, NormalizationRecord};
use crate::geomdist::{recon_loss, GeomError, LossVariant, PointCloud};
use crate::model::{
    clouds_to_tensor, sample_prior, Decoder, Discriminator, Mapper, ModelError, StarNet,
};
use crate::tensor::nn::{self, Mode};
use crate::tensor::{grad, no_grad, Tensor, TensorError};

pub use adam::{AdamState, ADAM_EPS};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, OptimizerRecord, Stage, TensorRecord,
    CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("optimizer state mismatch: {0}")]
    Optimizer(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("frozen decoder violated: {0}")]
    Frozen(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint is from stage {found}, expected stage {expected}")]
    StageMismatch { found: u8, expected: u8 },
    #[error("io error on {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct StageOneConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub decay_epoch: usize,
    pub decay_ratio: f64,
    pub batch: usize,
    pub epochs: usize,
    pub loss_variant: LossVariant,
}

impl Default for StageOneConfig {
    fn default() -> Self {
        StageOneConfig {
            lr: 0.001,
            betas: (0.9, 0.99),
            decay_epoch: 400,
            decay_ratio: 0.1,
            batch: 128,
            epochs: 500,
            loss_variant: LossVariant::Both,
        }
    }
}

impl StageOneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decay_epoch >= self.epochs {
            return Err(TrainError::Config(format!(
                "decay_epoch {} must be below epochs {}",
                self.decay_epoch, self.epochs
            )));
        }
        if self.batch < 2 {
            return Err(TrainError::Config("batch must be at least 2".into()));
        }
        if !(self.lr >= 0.0 && self.decay_ratio > 0.0) {
            return Err(TrainError::Config("lr must be ≥ 0 and decay_ratio > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub gp_weight: f64,
    pub batch: usize,
    pub epochs: usize,
    pub d_steps_per_g: usize,
}

impl Default for StageTwoConfig {
    fn default() -> Self {
        StageTwoConfig {
            lr: 0.0001,
            betas: (0.5, 0.9),
            gp_weight: 10.0,
            batch: 64,
            epochs: 500,
            d_steps_per_g: 5,
        }
    }
}

impl StageTwoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_steps_per_g == 0 {
            return Err(TrainError::Config("d_steps_per_g must be at least 1".into()));
        }
        if self.batch < 2 {
            return Err(TrainError::Config("batch must be at least 2".into()));
        }
        if !(self.gp_weight >= 0.0 && self.lr >= 0.0) {
            return Err(TrainError::Config("gp_weight and lr must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Step schedule: `lr` before `decay_epoch`, `lr · decay_ratio` from it on.
pub fn lr_schedule(epoch: usize, cfg: &StageOneConfig) -> f64 {
    if epoch < cfg.decay_epoch {
        cfg.lr
    } else {
        cfg.lr * cfg.decay_ratio
    }
}

/// Independent stream per `(seed, stage, epoch)`.
pub fn epoch_rng(seed: u64, stage: u8, epoch: usize) -> ChaCha8Rng {
    let mix = (stage as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(seed ^ mix)
}

/// Normalized training clouds with the records needed to report distances
/// in the original coordinates.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub clouds: Vec<PointCloud>,
    pub records: Vec<NormalizationRecord>,
}

impl TrainSet {
    pub fn from_raw(raw: &[PointCloud]) -> Result<Self> {
        let (clouds, records) = raw
            .iter()
            .map(normalize_unit_cube)
            .collect::<std::result::Result<Vec<_>, _>>()?
            .into_iter()
            .unzip();
        TrainSet::new(clouds, records)
    }

    pub fn new(clouds: Vec<PointCloud>, records: Vec<NormalizationRecord>) -> Result<Self> {
        if clouds.is_empty() || clouds.len() != records.len() {
            return Err(TrainError::Config(format!(
                "need a non-empty set with one record per cloud ({} clouds, {} records)",
                clouds.len(),
                records.len()
            )));
        }
        Ok(TrainSet { clouds, records })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }
}

/// Shuffled index batches. A trailing batch of one sample is folded into the
/// previous batch because train-mode batch norm needs two samples.
fn batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut out: Vec<Vec<usize>> = idx.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn checked_grads(
    out: &Tensor,
    params: &[Tensor],
    seed: Option<&Tensor>,
    epoch: usize,
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&Tensor> = params.iter().collect();
    let gs: Vec<Vec<f64>> = grad(out, &refs, seed, false)?
        .iter()
        .map(Tensor::to_vec)
        .collect();
    if gs.iter().flatten().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite {
            what: "gradient",
            epoch,
            batch,
        });
    }
    Ok(gs)
}

/// Anything that maps a `[B, N, 3]` batch to a reconstruction of the same
/// shape through trainable parameters.
pub trait AutoEncoder {
    fn reconstruct(&self, x: &Tensor, mode: Mode) -> Result<Tensor>;
    fn parameters(&self) -> Vec<Tensor>;
}

impl AutoEncoder for StarNet {
    fn reconstruct(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(StarNet::reconstruct(self, x, mode)?)
    }

    fn parameters(&self) -> Vec<Tensor> {
        let nt = self.named_tensors();
        let mut p = nt.filtered("enc.").param_tensors();
        p.extend(nt.filtered("dec.").param_tensors());
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean optimized objective in normalized coordinates.
    pub loss: f64,
    /// Mean Chamfer distance in the original coordinates.
    pub cd: f64,
    /// Mean EMD in the original coordinates.
    pub emd: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochStats {
    /// Equality ignoring wall time.
    pub fn same_values(&self, other: &EpochStats) -> bool {
        (self.epoch, self.loss, self.cd, self.emd, self.lr)
            == (other.epoch, other.loss, other.cd, other.emd, other.lr)
    }
}

/// One Stage-1 epoch. The per-point loss gradient with respect to the
/// reconstruction seeds the backward pass through decoder and encoder.
pub fn train_ae_epoch<A: AutoEncoder + ?Sized>(
    model: &A,
    data: &TrainSet,
    opt: &mut AdamState,
    cfg: &StageOneConfig,
    epoch: usize,
    seed: u64,
) -> Result<EpochStats> {
    cfg.validate()?;
    let start = Instant::now();
    opt.lr = lr_schedule(epoch, cfg);
    let params = model.parameters();
    let mut rng = epoch_rng(seed, 1, epoch);
    let (mut loss_sum, mut cd_sum, mut emd_sum) = (0.0, 0.0, 0.0);
    for (bi, idx) in batches(data.len(), cfg.batch, &mut rng).iter().enumerate() {
        let targets: Vec<PointCloud> = idx.iter().map(|&i| data.clouds[i].clone()).collect();
        let x = clouds_to_tensor(&targets)?;
        let out = model.reconstruct(&x, Mode::Train)?;
        let preds = crate::model::tensor_to_clouds(&out.detach()).map_err(|_| {
            TrainError::NonFinite {
                what: "reconstruction",
                epoch,
                batch: bi,
            }
        })?;
        let losses = preds
            .par_iter()
            .zip(&targets)
            .map(|(p, t)| recon_loss(p, t, cfg.loss_variant))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let b = idx.len() as f64;
        let mut seed_grad = Vec::with_capacity(out.numel());
        for (l, &i) in losses.iter().zip(idx) {
            if !l.value.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "loss",
                    epoch,
                    batch: bi,
                });
            }
            loss_sum += l.value;
            let s = data.records[i].scale;
            cd_sum += l.cd * s * s;
            emd_sum += l.emd * s;
            seed_grad.extend(l.grad.iter().flatten().map(|g| g / b));
        }
        let seed_t = Tensor::new(seed_grad, out.shape())?;
        let grads = checked_grads(&out, &params, Some(&seed_t), epoch, bi)?;
        opt.step(&params, &grads)?;
    }
    let n = data.len() as f64;
    Ok(EpochStats {
        epoch,
        loss: loss_sum / n,
        cd: cd_sum / n,
        emd: emd_sum / n,
        lr: opt.lr,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean CD and EMD of `model`'s eval-mode reconstructions, in the original
/// coordinates.
pub fn evaluate_reconstruction<A: AutoEncoder + ?Sized>(
    model: &A,
    data: &TrainSet,
    batch: usize,
) -> Result<(f64, f64)> {
    let (mut cd, mut emd) = (0.0, 0.0);
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(batch.max(1)) {
        let targets: Vec<PointCloud> = chunk.iter().map(|&i| data.clouds[i].clone()).collect();
        let out = no_grad(|| model.reconstruct(&clouds_to_tensor(&targets)?, Mode::Eval))?;
        let preds = crate::model::tensor_to_clouds(&out)?;
        let ls = preds
            .par_iter()
            .zip(&targets)
            .map(|(p, t)| recon_loss(p, t, LossVariant::Both))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        for (l, &i) in ls.iter().zip(chunk) {
            let s = data.records[i].scale;
            cd += l.cd * s * s;
            emd += l.emd * s;
        }
    }
    let n = data.len() as f64;
    Ok((cd / n, emd / n))
}

/// A scalar-per-sample critic `[B, N, 3] -> [B]`.
pub trait Critic {
    fn score(&self, x: &Tensor) -> Result<Tensor>;
    fn parameters(&self) -> Vec<Tensor>;
}

impl Critic for Discriminator {
    fn score(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Train)?)
    }

    fn parameters(&self) -> Vec<Tensor> {
        let mut nt = crate::model::NamedTensors::default();
        self.visit("disc", &mut nt);
        nt.param_tensors()
    }
}

/// `λ · mean_b (‖∇_x̂ D(x̂_b)‖₂ − 1)²` at `x̂_b = u_b·real_b + (1 − u_b)·fake_b`,
/// differentiable with respect to the critic's parameters.
pub fn gradient_penalty<C: Critic + ?Sized>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    u: &[f64],
    lambda: f64,
) -> Result<Tensor> {
    let shape = real.shape().to_vec();
    if fake.shape() != shape.as_slice() || shape.len() != 3 || u.len() != shape[0] {
        return Err(TrainError::Config(format!(
            "gradient penalty needs equal [B, N, 3] batches and B mixing weights, got {:?}, {:?}, {}",
            shape,
            fake.shape(),
            u.len()
        )));
    }
    let per = shape[1] * shape[2];
    let (r, f) = (real.data(), fake.data());
    let mixed: Vec<f64> = (0..r.len())
        .map(|k| {
            let ub = u[k / per];
            ub * r[k] + (1.0 - ub) * f[k]
        })
        .collect();
    drop((r, f));
    let x_hat = Tensor::leaf(mixed, &shape, true)?;
    let total = critic.score(&x_hat)?.sum_all()?;
    let g = nn::input_gradient_node(&total, &x_hat)?.reshape(&[shape[0], per])?;
    let norms = g.square()?.sum_last()?.sqrt()?;
    Ok(norms.add_scalar(-1.0)?.square()?.mean_all()?.scale(lambda)?)
}

/// Critic objective `E[D(fake)] − E[D(real)] + GP`.
pub struct CriticLoss {
    pub loss: Tensor,
    /// `E[D(real)] − E[D(fake)]`.
    pub wasserstein: f64,
    pub gp: f64,
}

pub fn critic_loss<C: Critic + ?Sized>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    u: &[f64],
    lambda: f64,
) -> Result<CriticLoss> {
    let d_real = critic.score(real)?.mean_all()?;
    let d_fake = critic.score(fake)?.mean_all()?;
    let gp = gradient_penalty(critic, real, fake, u, lambda)?;
    let w = d_real.item() - d_fake.item();
    let gp_v = gp.item();
    Ok(CriticLoss {
        loss: d_fake.sub(&d_real)?.add(&gp)?,
        wasserstein: w,
        gp: gp_v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanEpochStats {
    pub epoch: usize,
    /// Mean `E[D(real)] − E[D(fake)]` over the critic steps.
    pub wasserstein: f64,
    /// Mean gradient-penalty term over the critic steps.
    pub gp: f64,
    /// Mean generator loss `−E[D(fake)]`.
    pub g_loss: f64,
    pub d_steps: usize,
    pub g_steps: usize,
    pub seconds: f64,
}

impl GanEpochStats {
    pub fn same_values(&self, o: &GanEpochStats) -> bool {
        (self.epoch, self.wasserstein, self.gp, self.g_loss, self.d_steps, self.g_steps)
            == (o.epoch, o.wasserstein, o.gp, o.g_loss, o.d_steps, o.g_steps)
    }
}

/// Bit pattern of every decoder tensor, used to prove it did not move.
pub fn decoder_fingerprint(decoder: &Decoder) -> Vec<u64> {
    let mut nt = crate::model::NamedTensors::default();
    decoder.visit("dec", &mut nt);
    nt.all()
        .flat_map(|(_, t)| t.to_vec().into_iter().map(f64::to_bits))
        .collect()
}

fn ensure_frozen(decoder: &Decoder) -> Result<()> {
    let mut nt = crate::model::NamedTensors::default();
    decoder.visit("dec", &mut nt);
    let live = nt.all().find(|(_, t)| t.requires_grad()).map(|(n, _)| n.clone());
    match live {
        Some(name) => Err(TrainError::Frozen(format!("{name} requires a gradient"))),
        None => Ok(()),
    }
}

/// Optimizers for Stage 2.
#[derive(Debug, Clone)]
pub struct GanOptimizers {
    pub mapper: AdamState,
    pub critic: AdamState,
}

impl GanOptimizers {
    pub fn new<C: Critic + ?Sized>(mapper: &Mapper, critic: &C, cfg: &StageTwoConfig) -> Self {
        GanOptimizers {
            mapper: AdamState::new(&mapper_params(mapper), cfg.lr, cfg.betas),
            critic: AdamState::new(&critic.parameters(), cfg.lr, cfg.betas),
        }
    }
}

pub fn mapper_params(mapper: &Mapper) -> Vec<Tensor> {
    let mut nt = crate::model::NamedTensors::default();
    mapper.visit("map", &mut nt);
    nt.param_tensors()
}

/// One Stage-2 epoch over `real` (normalized clouds). `decoder` must be a
/// frozen copy; it runs in eval mode and is checked bitwise afterwards.
#[allow(clippy::too_many_arguments)]
pub fn train_gan_epoch<C: Critic + ?Sized>(
    mapper: &Mapper,
    decoder: &Decoder,
    critic: &C,
    real: &[PointCloud],
    opt: &mut GanOptimizers,
    cfg: &StageTwoConfig,
    epoch: usize,
    seed: u64,
) -> Result<GanEpochStats> {
    cfg.validate()?;
    ensure_frozen(decoder)?;
    if real.len() < 2 {
        return Err(TrainError::Config("stage 2 needs at least 2 real clouds".into()));
    }
    let start = Instant::now();
    let before = decoder_fingerprint(decoder);
    let mut rng = epoch_rng(seed, 2, epoch);
    let batch = cfg.batch.min(real.len());
    let iterations = real.len().div_ceil(batch * cfg.d_steps_per_g).max(1);
    let mut order: Vec<usize> = Vec::new();
    let m_params = mapper_params(mapper);
    let c_params = critic.parameters();
    let latent = mapper.dim;
    let (mut w_sum, mut gp_sum, mut g_sum) = (0.0, 0.0, 0.0);
    let (mut d_steps, mut g_steps) = (0, 0);
    for it in 0..iterations {
        for _ in 0..cfg.d_steps_per_g {
            if order.len() < batch {
                let mut fresh: Vec<usize> = (0..real.len()).collect();
                fresh.shuffle(&mut rng);
                order.extend(fresh);
            }
            let idx: Vec<usize> = order.drain(..batch).collect();
            let real_b: Vec<PointCloud> = idx.iter().map(|&i| real[i].clone()).collect();
            let x_real = clouds_to_tensor(&real_b)?;
            let w = sample_prior(batch, latent, &mut rng);
            let x_fake = no_grad(|| -> Result<Tensor> {
                let z = mapper.forward(&w, Mode::Train)?;
                Ok(decoder.forward(&z, Mode::Eval)?)
            })?;
            let u: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
            let cl = critic_loss(critic, &x_real, &x_fake, &u, cfg.gp_weight)?;
            if !cl.loss.item().is_finite() {
                return Err(TrainError::NonFinite {
                    what: "critic loss",
                    epoch,
                    batch: it,
                });
            }
            let grads = checked_grads(&cl.loss, &c_params, None, epoch, it)?;
            opt.critic.step(&c_params, &grads)?;
            w_sum += cl.wasserstein;
            gp_sum += cl.gp;
            d_steps += 1;
        }
        let w = sample_prior(batch, latent, &mut rng);
        let z = mapper.forward(&w, Mode::Train)?;
        let fake = decoder.forward(&z, Mode::Eval)?;
        let g_loss = critic.score(&fake)?.mean_all()?.scale(-1.0)?;
        if !g_loss.item().is_finite() {
            return Err(TrainError::NonFinite {
                what: "generator loss",
                epoch,
                batch: it,
            });
        }
        let grads = checked_grads(&g_loss, &m_params, None, epoch, it)?;
        opt.mapper.step(&m_params, &grads)?;
        g_sum += g_loss.item();
        g_steps += 1;
    }
    if decoder_fingerprint(decoder) != before {
        return Err(TrainError::Frozen("decoder values changed during stage 2".into()));
    }
    Ok(GanEpochStats {
        epoch,
        wasserstein: w_sum / d_steps as f64,
        gp: gp_sum / d_steps as f64,
        g_loss: g_sum / g_steps as f64,
        d_steps,
        g_steps,
        seconds: start.elapsed().as_secs_f64(),
    })
}
