//! Network building blocks on top of the primitive tensor ops.

use super::{grad, ops, Result, Tensor, TensorError};

/// Slope used by every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Added to the per-channel variance before the square root in instance
/// statistics, so a constant channel yields `sqrt(eps)` rather than zero.
pub const CHANNEL_STATS_EPS: f64 = 1e-5;

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Weight of the previous running estimate when batch statistics are folded in.
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// `x[B, I] · w[I, O] + b[O]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.matmul(w)?.add_bias(b)
}

/// Kernel-size-1 convolution over points: the same affine map applied to every
/// point of `x[B, N, C]`, giving `[B, N, C']`.
pub fn pointwise_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let &[bs, n, c] = x.shape() else {
        return Err(TensorError::Invalid(format!(
            "pointwise_conv expects [B, N, C], got {:?}",
            x.shape()
        )));
    };
    let &[wc, out_c] = w.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: "pointwise_conv",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    };
    if wc != c {
        return Err(TensorError::ShapeMismatch {
            op: "pointwise_conv",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    affine(&x.reshape(&[bs * n, c])?, w, b)?.reshape(&[bs, n, out_c])
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    x.leaky_relu(slope)
}

pub fn tanh_act(x: &Tensor) -> Result<Tensor> {
    x.tanh()
}

pub fn sigmoid_act(x: &Tensor) -> Result<Tensor> {
    x.sigmoid()
}

/// Running mean and (unbiased) variance for batch normalization. Both are
/// constant tensors so they can be checkpointed alongside parameters.
#[derive(Debug, Clone)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], 1.0),
        }
    }

    fn update(&self, batch_mean: &[f64], batch_var: &[f64], count: usize) {
        let unbias = if count > 1 {
            count as f64 / (count as f64 - 1.0)
        } else {
            1.0
        };
        let m = BATCH_NORM_MOMENTUM;
        for (r, b) in self.mean.data_mut().iter_mut().zip(batch_mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.var.data_mut().iter_mut().zip(batch_var) {
            *r = m * *r + (1.0 - m) * b * unbias;
        }
    }
}

/// Batch normalization per channel of `x[B, C]` or `x[B, N, C]` (statistics
/// over every non-channel index). Train mode needs at least two samples per
/// channel and folds the batch statistics into `stats`.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &RunningStats,
    mode: Mode,
) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    let c = match shape.as_slice() {
        [_, c] | [_, _, c] => *c,
        _ => {
            return Err(TensorError::Invalid(format!(
                "batch_norm expects [B, C] or [B, N, C], got {shape:?}"
            )))
        }
    };
    let rows = x.numel() / c;
    let x2 = x.reshape(&[rows, c])?;
    let y = match mode {
        Mode::Train => {
            let (y, mean, var) = ops::batch_norm_train(&x2, gamma, beta, BATCH_NORM_EPS)?;
            stats.update(&mean, &var, rows);
            y
        }
        Mode::Eval => {
            // y = x·s + (β − μ·s) with s = γ / sqrt(var + eps).
            let inv: Vec<f64> = stats
                .var
                .data()
                .iter()
                .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
                .collect();
            let s = gamma.mul(&Tensor::new(inv, &[c])?)?;
            let shift = beta.sub(&s.mul(&stats.mean)?)?;
            x2.mul(&s.expand_leading(&[rows, c])?)?.add_bias(&shift)?
        }
    };
    y.reshape(&shape)
}

/// Per-instance, per-channel mean and standard deviation over the point axis
/// of `x[B, N, C]`; `σ = sqrt(var + ε)` with the biased variance.
pub fn channel_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = match x.shape() {
        [_, n, _] if *n >= 1 => *n,
        s => {
            return Err(TensorError::Invalid(format!(
                "channel_stats expects [B, N >= 1, C], got {s:?}"
            )))
        }
    };
    let mu = x.mean_points()?;
    let centered = x.sub(&mu.expand_points(n)?)?;
    let sigma = centered
        .square()?
        .mean_points()?
        .add_scalar(CHANNEL_STATS_EPS)?
        .sqrt()?;
    Ok((mu, sigma))
}

/// Symmetric reduction over the point axis, `[B, N, C] -> [B, C]`.
pub fn pool_points(x: &Tensor, kind: PoolKind) -> Result<Tensor> {
    match kind {
        PoolKind::Max => x.max_points(),
        PoolKind::Avg => x.mean_points(),
    }
}

/// `∇_wrt scalar_out` as a recorded tensor that can itself be differentiated,
/// e.g. with respect to network parameters.
pub fn input_gradient_node(scalar_out: &Tensor, wrt: &Tensor) -> Result<Tensor> {
    if scalar_out.numel() != 1 {
        return Err(TensorError::NonScalarLoss(scalar_out.shape().to_vec()));
    }
    if !scalar_out.requires_grad() || !wrt.requires_grad() {
        return Err(TensorError::Disconnected);
    }
    let mut g = grad(scalar_out, &[wrt], None, true)?;
    Ok(g.remove(0))
}
