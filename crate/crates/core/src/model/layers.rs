use rand::Rng;

use super::Result;
use crate::tensor::nn::{self, Mode, RunningStats, LEAKY_SLOPE};
use crate::tensor::Tensor;

/// Ordered `(name, tensor)` pairs, split into trainable parameters and
/// non-trainable buffers (running statistics, constant inputs).
#[derive(Debug, Clone, Default)]
pub struct NamedTensors {
    pub params: Vec<(String, Tensor)>,
    pub buffers: Vec<(String, Tensor)>,
}

impl NamedTensors {
    pub fn param(&mut self, name: String, t: &Tensor) {
        self.params.push((name, t.clone()));
    }

    pub fn buffer(&mut self, name: String, t: &Tensor) {
        self.buffers.push((name, t.clone()));
    }

    pub fn all(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.params.iter().chain(&self.buffers)
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Only the entries whose name starts with `prefix`.
    pub fn filtered(&self, prefix: &str) -> NamedTensors {
        let keep = |v: &Vec<(String, Tensor)>| {
            v.iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .cloned()
                .collect()
        };
        NamedTensors {
            params: keep(&self.params),
            buffers: keep(&self.buffers),
        }
    }
}

/// `x · W + b` with `W[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl Linear {
    /// Kaiming-uniform weights for LeakyReLU and `U(±1/√fan_in)` biases.
    pub fn kaiming(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let wb = (3.0 * gain / fan_in as f64).sqrt();
        let bb = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: Tensor::param(uniform(rng, fan_in * fan_out, wb), &[fan_in, fan_out])
                .expect("shape matches data"),
            bias: Tensor::param(uniform(rng, fan_out, bb), &[fan_out]).expect("shape matches data"),
        }
    }

    /// Style transform `z -> [y_s ‖ y_b]` for `c` channels: small weights,
    /// bias 1 on the scale half and 0 on the shift half.
    pub fn style(latent: usize, c: usize, rng: &mut impl Rng) -> Self {
        let wb = 1.0 / (latent as f64).sqrt();
        let bias: Vec<f64> = (0..2 * c).map(|i| if i < c { 1.0 } else { 0.0 }).collect();
        Linear {
            weight: Tensor::param(uniform(rng, latent * 2 * c, wb), &[latent, 2 * c])
                .expect("shape matches data"),
            bias: Tensor::param(bias, &[2 * c]).expect("shape matches data"),
        }
    }

    /// `[B, I] -> [B, O]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(nn::affine(x, &self.weight, &self.bias)?)
    }

    /// Pointwise over `[B, N, I] -> [B, N, O]`.
    pub fn conv(&self, x: &Tensor) -> Result<Tensor> {
        Ok(nn::pointwise_conv(x, &self.weight, &self.bias)?)
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> Linear {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn visit(&self, prefix: &str, out: &mut NamedTensors) {
        out.param(format!("{prefix}.weight"), &self.weight);
        out.param(format!("{prefix}.bias"), &self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        BatchNorm {
            gamma: Tensor::param(vec![1.0; c], &[c]).expect("shape matches data"),
            beta: Tensor::param(vec![0.0; c], &[c]).expect("shape matches data"),
            stats: RunningStats::new(c),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(nn::batch_norm(x, &self.gamma, &self.beta, &self.stats, mode)?)
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> BatchNorm {
        BatchNorm {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
            stats: RunningStats {
                mean: f(&self.stats.mean),
                var: f(&self.stats.var),
            },
        }
    }

    pub fn visit(&self, prefix: &str, out: &mut NamedTensors) {
        out.param(format!("{prefix}.gamma"), &self.gamma);
        out.param(format!("{prefix}.beta"), &self.beta);
        out.buffer(format!("{prefix}.running_mean"), &self.stats.mean);
        out.buffer(format!("{prefix}.running_var"), &self.stats.var);
    }
}
