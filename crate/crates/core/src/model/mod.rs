//! The four networks: PointNet encoder, style-aware decoder, mapping network
//! and PointNet critic. Activations are channels-last `[B, N, C]`.

mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomdist::{GeomError, PointCloud};
use crate::tensor::nn::{self, Mode, PoolKind, LEAKY_SLOPE};
use crate::tensor::{Tensor, TensorError};

pub use layers::{BatchNorm, Linear, NamedTensors};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid decoder flags: {0}")]
    Flags(String),
    #[error("expected input shape {expected}, got {got:?}")]
    Shape { expected: String, got: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Decoder ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderFlags {
    /// Replace the style path by a per-point MLP on `[constant ‖ z]`.
    pub mlp_decoder: bool,
    /// Skip the squeeze-and-excitation gates.
    pub se_off: bool,
    /// Constant input drawn from the `z = 0` square instead of the cube.
    pub surface_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub enc_widths: Vec<usize>,
    pub dec_widths: Vec<usize>,
    pub disc_widths: Vec<usize>,
    pub disc_fc: usize,
    pub mapper_layers: usize,
    pub se_reduction: usize,
    /// Points emitted by the decoder.
    pub points: usize,
    pub flags: DecoderFlags,
    /// Batch norm in the critic trunk. Incompatible with the gradient penalty.
    pub disc_batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 128,
            enc_widths: vec![64, 128, 256, 512],
            dec_widths: vec![64, 128, 256, 512],
            disc_widths: vec![64, 128, 256, 512],
            disc_fc: 256,
            mapper_layers: 4,
            se_reduction: 4,
            points: 2048,
            flags: DecoderFlags::default(),
            disc_batch_norm: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.latent_dim == 0 || self.points == 0 || self.disc_fc == 0 {
            return bad("latent_dim, points and disc_fc must be positive");
        }
        for (name, w) in [
            ("enc_widths", &self.enc_widths),
            ("dec_widths", &self.dec_widths),
            ("disc_widths", &self.disc_widths),
        ] {
            if w.is_empty() || w.contains(&0) {
                return bad(&format!("{name} must be non-empty and positive"));
            }
        }
        if self.mapper_layers == 0 {
            return bad("mapper_layers must be positive");
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be positive");
        }
        if !self.flags.mlp_decoder && !self.flags.se_off {
            if let Some(c) = self.dec_widths.iter().find(|&&c| c % self.se_reduction != 0) {
                return bad(&format!(
                    "decoder width {c} is not divisible by se_reduction {}",
                    self.se_reduction
                ));
            }
        }
        if self.flags.mlp_decoder && (self.flags.se_off || self.flags.surface_input) {
            return Err(ModelError::Flags(
                "mlp_decoder excludes se_off and surface_input".into(),
            ));
        }
        Ok(())
    }
}

fn expect_rank3(x: &Tensor, c: usize) -> Result<(usize, usize)> {
    match *x.shape() {
        [b, n, cc] if cc == c && n > 0 && b > 0 => Ok((b, n)),
        _ => Err(ModelError::Shape {
            expected: format!("[B, N, {c}]"),
            got: x.shape().to_vec(),
        }),
    }
}

fn expect_rank2(x: &Tensor, c: usize) -> Result<usize> {
    match *x.shape() {
        [b, cc] if cc == c && b > 0 => Ok(b),
        _ => Err(ModelError::Shape {
            expected: format!("[B, {c}]"),
            got: x.shape().to_vec(),
        }),
    }
}

/// Stacks equally sized clouds into a constant `[B, N, 3]` tensor.
pub fn clouds_to_tensor(clouds: &[PointCloud]) -> Result<Tensor> {
    let n = clouds.first().map(PointCloud::len).unwrap_or(0);
    if clouds.is_empty() || clouds.iter().any(|c| c.len() != n) {
        return Err(ModelError::Shape {
            expected: "non-empty batch of equal-size clouds".into(),
            got: clouds.iter().map(PointCloud::len).collect(),
        });
    }
    let data: Vec<f64> = clouds.iter().flat_map(|c| c.to_flat()).collect();
    Ok(Tensor::new(data, &[clouds.len(), n, 3])?)
}

pub fn tensor_to_clouds(x: &Tensor) -> Result<Vec<PointCloud>> {
    let (_, n) = expect_rank3(x, 3)?;
    let d = x.data();
    d.chunks(n * 3)
        .map(|c| PointCloud::from_flat(c).map_err(ModelError::from))
        .collect()
}

/// `[B, dim]` i.i.d. standard normal prior samples.
pub fn sample_prior(batch: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    let data: Vec<f64> = (0..batch * dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(data, &[batch, dim]).expect("shape matches data")
}

/// `z(α) = (1 − α)·z_a + α·z_b` for each α.
pub fn interpolate_latent(z_a: &[f64], z_b: &[f64], alphas: &[f64]) -> Result<Vec<Vec<f64>>> {
    if z_a.len() != z_b.len() {
        return Err(ModelError::Shape {
            expected: format!("latent of length {}", z_a.len()),
            got: vec![z_b.len()],
        });
    }
    Ok(alphas
        .iter()
        .map(|&a| z_a.iter().zip(z_b).map(|(x, y)| (1.0 - a) * x + a * y).collect())
        .collect())
}

/// Instance-normalizes each channel of `x[B, N, C]` over its points, then
/// applies the per-sample style `y_s[B, C]`, `y_b[B, C]`.
pub fn adain(x: &Tensor, y_s: &Tensor, y_b: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().unwrap_or(&0);
    let (b, n) = expect_rank3(x, c)?;
    for y in [y_s, y_b] {
        if y.shape() != [b, c] {
            return Err(ModelError::Shape {
                expected: format!("[{b}, {c}]"),
                got: y.shape().to_vec(),
            });
        }
    }
    let (mu, sigma) = nn::channel_stats(x)?;
    let normed = x.sub(&mu.expand_points(n)?)?.div(&sigma.expand_points(n)?)?;
    Ok(normed
        .mul(&y_s.expand_points(n)?)?
        .add(&y_b.expand_points(n)?)?)
}

/// Squeeze-and-excitation: max-pool descriptor, bottleneck MLP, sigmoid gate.
#[derive(Debug, Clone)]
pub struct SeLayer {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SeLayer {
    pub fn new(c: usize, r: usize, rng: &mut impl Rng) -> Result<Self> {
        if r == 0 || !c.is_multiple_of(r) {
            return Err(ModelError::Config(format!(
                "SE channels {c} not divisible by reduction {r}"
            )));
        }
        Ok(SeLayer {
            fc1: Linear::kaiming(c, c / r, rng),
            fc2: Linear::kaiming(c / r, c, rng),
        })
    }

    pub fn gates(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = nn::pool_points(x, PoolKind::Max)?;
        let h = nn::leaky_relu(&self.fc1.forward(&pooled)?, LEAKY_SLOPE)?;
        Ok(nn::sigmoid_act(&self.fc2.forward(&h)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[1];
        Ok(x.mul(&self.gates(x)?.expand_points(n)?)?)
    }

    fn visit(&self, prefix: &str, out: &mut NamedTensors) {
        self.fc1.visit(&format!("{prefix}.fc1"), out);
        self.fc2.visit(&format!("{prefix}.fc2"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub convs: Vec<(Linear, BatchNorm)>,
    pub fc: Linear,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let mut c = 3;
        for &w in &cfg.enc_widths {
            convs.push((Linear::kaiming(c, w, rng), BatchNorm::new(w)));
            c = w;
        }
        Encoder {
            convs,
            fc: Linear::kaiming(2 * c, cfg.latent_dim, rng),
        }
    }

    /// Max-pooled and average-pooled trunk features, concatenated `[B, 2C]`.
    pub fn pooled_features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        expect_rank3(x, 3)?;
        let mut h = x.clone();
        for (conv, bn) in &self.convs {
            h = nn::leaky_relu(&bn.forward(&conv.conv(&h)?, mode)?, LEAKY_SLOPE)?;
        }
        let mx = nn::pool_points(&h, PoolKind::Max)?;
        let av = nn::pool_points(&h, PoolKind::Avg)?;
        Ok(mx.concat_last(&av)?)
    }

    /// `[B, N, 3] -> [B, latent]`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.fc.forward(&self.pooled_features(x, mode)?)
    }

    pub fn visit(&self, prefix: &str, out: &mut NamedTensors) {
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            conv.visit(&format!("{prefix}.conv{i}"), out);
            bn.visit(&format!("{prefix}.bn{i}"), out);
        }
        self.fc.visit(&format!("{prefix}.fc"), out);
    }
}

#[derive(Debug, Clone)]
pub struct StyleBlock {
    /// `z -> [y_s ‖ y_b]` over the block's input channels.
    pub style: Linear,
    pub conv: Linear,
    pub bn: BatchNorm,
    pub se: Option<SeLayer>,
}

impl StyleBlock {
    fn forward(&self, h: &Tensor, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let c_in = h.shape()[2];
        let y = self.style.forward(z)?;
        let y_s = y.slice_last(0, c_in)?;
        let y_b = y.slice_last(c_in, c_in)?;
        let mut out = self.bn.forward(&self.conv.conv(&adain(h, &y_s, &y_b)?)?, mode)?;
        if let Some(se) = &self.se {
            out = se.forward(&out)?;
        }
        Ok(nn::leaky_relu(&out, LEAKY_SLOPE)?)
    }
}

#[derive(Debug, Clone)]
pub enum DecoderBody {
    Style(Vec<StyleBlock>),
    Mlp(Vec<(Linear, BatchNorm)>),
}

#[derive(Debug, Clone)]
pub struct Decoder {
    /// Frozen `[N, 3]` starting coordinates.
    pub constant_input: Tensor,
    pub body: DecoderBody,
    pub head: Linear,
    pub latent_dim: usize,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.points;
        let pts: Vec<f64> = (0..n)
            .flat_map(|_| {
                let p: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..1.0));
                if cfg.flags.surface_input {
                    [p[0], p[1], 0.0]
                } else {
                    p
                }
            })
            .collect();
        let constant_input = Tensor::new(pts, &[n, 3])?;
        let mut c = 3;
        let body = if cfg.flags.mlp_decoder {
            let mut layers = Vec::new();
            c += cfg.latent_dim;
            for &w in &cfg.dec_widths {
                layers.push((Linear::kaiming(c, w, rng), BatchNorm::new(w)));
                c = w;
            }
            DecoderBody::Mlp(layers)
        } else {
            let mut blocks = Vec::new();
            for &w in &cfg.dec_widths {
                let style = Linear::style(cfg.latent_dim, c, rng);
                let conv = Linear::kaiming(c, w, rng);
                let se = if cfg.flags.se_off {
                    None
                } else {
                    Some(SeLayer::new(w, cfg.se_reduction, rng)?)
                };
                blocks.push(StyleBlock {
                    style,
                    conv,
                    bn: BatchNorm::new(w),
                    se,
                });
                c = w;
            }
            DecoderBody::Style(blocks)
        };
        Ok(Decoder {
            constant_input,
            body,
            head: Linear::kaiming(c, 3, rng),
            latent_dim: cfg.latent_dim,
        })
    }

    pub fn points(&self) -> usize {
        self.constant_input.shape()[0]
    }

    /// A copy whose tensors share nothing with `self` and record no gradient.
    pub fn frozen_copy(&self) -> Decoder {
        let f = |t: &Tensor| t.detach_with_grad(false);
        let body = match &self.body {
            DecoderBody::Style(blocks) => DecoderBody::Style(
                blocks
                    .iter()
                    .map(|b| StyleBlock {
                        style: b.style.map(f),
                        conv: b.conv.map(f),
                        bn: b.bn.map(f),
                        se: b.se.as_ref().map(|se| SeLayer {
                            fc1: se.fc1.map(f),
                            fc2: se.fc2.map(f),
                        }),
                    })
                    .collect(),
            ),
            DecoderBody::Mlp(layers) => {
                DecoderBody::Mlp(layers.iter().map(|(l, b)| (l.map(f), b.map(f))).collect())
            }
        };
        Decoder {
            constant_input: f(&self.constant_input),
            body,
            head: self.head.map(f),
            latent_dim: self.latent_dim,
        }
    }

    fn batched_input(&self, b: usize) -> Result<Tensor> {
        let d = self.constant_input.data();
        let data: Vec<f64> = (0..b).flat_map(|_| d.iter().copied()).collect();
        Ok(Tensor::new(data, &[b, self.points(), 3])?)
    }

    /// `[B, latent] -> [B, N, 3]` with every coordinate in `(−1, 1)`.
    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let b = expect_rank2(z, self.latent_dim)?;
        let n = self.points();
        let x0 = self.batched_input(b)?;
        let h = match &self.body {
            DecoderBody::Style(blocks) => {
                let mut h = x0;
                for blk in blocks {
                    h = blk.forward(&h, z, mode)?;
                }
                h
            }
            DecoderBody::Mlp(layers) => {
                let mut h = x0.concat_last(&z.reshape(&[b, self.latent_dim])?.expand_points(n)?)?;
                for (lin, bn) in layers {
                    h = nn::leaky_relu(&bn.forward(&lin.conv(&h)?, mode)?, LEAKY_SLOPE)?;
                }
                h
            }
        };
        Ok(nn::tanh_act(&self.head.conv(&h)?)?)
    }

    pub fn visit(&self, prefix: &str, out: &mut NamedTensors) {
        out.buffer(format!("{prefix}.constant_input"), &self.constant_input);
        match &self.body {
            DecoderBody::Style(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    let p = format!("{prefix}.block{i}");
                    b.style.visit(&format!("{p}.style"), out);
                    b.conv.visit(&format!("{p}.conv"), out);
                    b.bn.visit(&format!("{p}.bn"), out);
                    if let Some(se) = &b.se {
                        se.visit(&format!("{p}.se"), out);
                    }
                }
            }
            DecoderBody::Mlp(layers) => {
                for (i, (lin, bn)) in layers.iter().enumerate() {
                    lin.visit(&format!("{prefix}.mlp{i}"), out);
                    bn.visit(&format!("{prefix}.bn{i}"), out);
                }
            }
        }
        self.head.visit(&format!("{prefix}.head"), out);
    }
}

#[derive(Debug, Clone)]
pub struct Mapper {
    pub layers: Vec<(Linear, BatchNorm)>,
    pub dim: usize,
}

impl Mapper {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.latent_dim;
        Mapper {
            layers: (0..cfg.mapper_layers)
                .map(|_| (Linear::kaiming(d, d, rng), BatchNorm::new(d)))
                .collect(),
            dim: d,
        }
    }

    /// `[B, dim] -> [B, dim]`.
    pub fn forward(&self, w: &Tensor, mode: Mode) -> Result<Tensor> {
        expect_rank2(w, self.dim)?;
        let mut h = w.clone();
        for (lin, bn) in &self.layers {
            h = nn::leaky_relu(&bn.forward(&lin.forward(&h)?, mode)?, LEAKY_SLOPE)?;
        }
        Ok(h)
    }

    pub fn visit(&self, prefix: &str, out: &mut NamedTensors) {
        for (i, (lin, bn)) in self.layers.iter().enumerate() {
            lin.visit(&format!("{prefix}.fc{i}"), out);
            bn.visit(&format!("{prefix}.bn{i}"), out);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub convs: Vec<(Linear, Option<BatchNorm>)>,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Discriminator {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let mut c = 3;
        for &w in &cfg.disc_widths {
            let bn = cfg.disc_batch_norm.then(|| BatchNorm::new(w));
            convs.push((Linear::kaiming(c, w, rng), bn));
            c = w;
        }
        Discriminator {
            convs,
            fc1: Linear::kaiming(c, cfg.disc_fc, rng),
            fc2: Linear::kaiming(cfg.disc_fc, 1, rng),
        }
    }

    /// Max-pooled trunk features `[B, C]`.
    pub fn pooled_features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        expect_rank3(x, 3)?;
        let mut h = x.clone();
        for (conv, bn) in &self.convs {
            h = conv.conv(&h)?;
            if let Some(bn) = bn {
                h = bn.forward(&h, mode)?;
            }
            h = nn::leaky_relu(&h, LEAKY_SLOPE)?;
        }
        Ok(nn::pool_points(&h, PoolKind::Max)?)
    }

    /// `[B, N, 3] -> [B]` unbounded critic scores.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let b = x.shape()[0];
        let f = self.pooled_features(x, mode)?;
        let h = nn::leaky_relu(&self.fc1.forward(&f)?, LEAKY_SLOPE)?;
        Ok(self.fc2.forward(&h)?.reshape(&[b])?)
    }

    pub fn visit(&self, prefix: &str, out: &mut NamedTensors) {
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            conv.visit(&format!("{prefix}.conv{i}"), out);
            if let Some(bn) = bn {
                bn.visit(&format!("{prefix}.bn{i}"), out);
            }
        }
        self.fc1.visit(&format!("{prefix}.fc1"), out);
        self.fc2.visit(&format!("{prefix}.fc2"), out);
    }
}

/// All four networks, initialized from one seed.
#[derive(Debug, Clone)]
pub struct StarNet {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub mapper: Mapper,
    pub discriminator: Discriminator,
}

impl StarNet {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sub = |k: u64| ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Ok(StarNet {
            config: config.clone(),
            encoder: Encoder::new(config, &mut sub(1)),
            decoder: Decoder::new(config, &mut sub(2))?,
            mapper: Mapper::new(config, &mut sub(3)),
            discriminator: Discriminator::new(config, &mut sub(4)),
        })
    }

    /// Every parameter and buffer, keyed `enc.*`, `dec.*`, `map.*`, `disc.*`.
    pub fn named_tensors(&self) -> NamedTensors {
        let mut out = NamedTensors::default();
        self.encoder.visit("enc", &mut out);
        self.decoder.visit("dec", &mut out);
        self.mapper.visit("map", &mut out);
        self.discriminator.visit("disc", &mut out);
        out
    }

    pub fn reconstruct(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.decoder.forward(&self.encoder.forward(x, mode)?, mode)
    }

    /// `decode(map(w))` in eval mode.
    pub fn generate(&self, w: &Tensor) -> Result<Tensor> {
        let z = self.mapper.forward(w, Mode::Eval)?;
        self.decoder.forward(&z, Mode::Eval)
    }
}
