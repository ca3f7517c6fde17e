use std::rc::Rc;

use super::{gemm, numel, Result, Tensor, TensorError};

/// Recorded operation. Variants carry whatever the backward rule needs beyond
/// the input tensors and the output values.
#[derive(Clone)]
pub(crate) enum Op {
    MatMul { ta: bool, tb: bool },
    Reshape,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    MulConst(Rc<Vec<f64>>),
    /// Holds the derivative mask (1 or slope per element).
    LeakyRelu(Rc<Vec<f64>>),
    Tanh,
    Sigmoid,
    Sqrt,
    AddBias,
    SumLeading,
    ExpandLeading,
    SumLast,
    ExpandLast,
    SumAll,
    ExpandScalar,
    SumPoints,
    ExpandPoints,
    GatherPoints(Rc<Vec<usize>>),
    ScatterPoints(Rc<Vec<usize>>),
    ConcatLast(usize),
    SliceLast { start: usize },
    PadLast { start: usize },
    BatchNorm {
        xhat: Rc<Vec<f64>>,
        inv_std: Rc<Vec<f64>>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::MatMul { .. } => "matmul",
            Op::Reshape => "reshape",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MulConst(_) => "mul_const",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Sqrt => "sqrt",
            Op::AddBias => "add_bias",
            Op::SumLeading => "sum_leading",
            Op::ExpandLeading => "expand_leading",
            Op::SumLast => "sum_last",
            Op::ExpandLast => "expand_last",
            Op::SumAll => "sum_all",
            Op::ExpandScalar => "expand_scalar",
            Op::SumPoints => "sum_points",
            Op::ExpandPoints => "expand_points",
            Op::GatherPoints(_) => "max_points",
            Op::ScatterPoints(_) => "scatter_points",
            Op::ConcatLast(_) => "concat",
            Op::SliceLast { .. } => "slice",
            Op::PadLast { .. } => "pad",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }

    /// Whether the backward rule is built from differentiable recorded ops
    /// (and therefore valid under `create_graph`).
    pub(crate) fn second_order(&self) -> bool {
        !matches!(
            self,
            Op::Div | Op::Tanh | Op::Sigmoid | Op::Sqrt | Op::BatchNorm { .. }
        )
    }

    pub(crate) fn backward(
        &self,
        inputs: &[Tensor],
        out: &Tensor,
        g: &Tensor,
        needed: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| needed.get(i).copied().unwrap_or(false);
        let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
        match self {
            Op::MatMul { ta, tb } => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let da = if want(0) {
                    Some(if !ta {
                        g.matmul_t(b, false, !tb)?
                    } else {
                        b.matmul_t(g, *tb, true)?
                    })
                } else {
                    None
                };
                let db = if want(1) {
                    Some(if !tb {
                        a.matmul_t(g, !ta, false)?
                    } else {
                        g.matmul_t(a, true, *ta)?
                    })
                } else {
                    None
                };
                Ok(vec![da, db])
            }
            Op::Reshape => one(g.reshape(inputs[0].shape())),
            Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
            Op::Sub => Ok(vec![
                Some(g.clone()),
                if want(1) { Some(g.scale(-1.0)?) } else { None },
            ]),
            Op::Mul => Ok(vec![
                if want(0) { Some(g.mul(&inputs[1])?) } else { None },
                if want(1) { Some(g.mul(&inputs[0])?) } else { None },
            ]),
            Op::Div => Ok(vec![
                if want(0) { Some(g.div(&inputs[1])?) } else { None },
                if want(1) {
                    Some(g.mul(out)?.div(&inputs[1])?.scale(-1.0)?)
                } else {
                    None
                },
            ]),
            Op::Scale(c) => one(g.scale(*c)),
            Op::AddScalar => Ok(vec![Some(g.clone())]),
            Op::MulConst(m) | Op::LeakyRelu(m) => one(g.mul_const(m.clone())),
            Op::Tanh => {
                let d: Vec<f64> = out.data().iter().map(|y| 1.0 - y * y).collect();
                one(g.mul_const(Rc::new(d)))
            }
            Op::Sigmoid => {
                let d: Vec<f64> = out.data().iter().map(|y| y * (1.0 - y)).collect();
                one(g.mul_const(Rc::new(d)))
            }
            Op::Sqrt => {
                // Subgradient 0 at the origin.
                let d: Vec<f64> = out
                    .data()
                    .iter()
                    .map(|&y| if y > 0.0 { 0.5 / y } else { 0.0 })
                    .collect();
                one(g.mul_const(Rc::new(d)))
            }
            Op::AddBias => Ok(vec![
                Some(g.clone()),
                if want(1) { Some(g.sum_leading()?) } else { None },
            ]),
            Op::SumLeading => one(g.expand_leading(inputs[0].shape())),
            Op::ExpandLeading => one(g.sum_leading()),
            Op::SumLast => {
                let c = *inputs[0].shape().last().unwrap();
                one(g.expand_last(c))
            }
            Op::ExpandLast => one(g.sum_last()),
            Op::SumAll => one(g.expand_scalar(inputs[0].shape())),
            Op::ExpandScalar => one(g.sum_all()?.reshape(inputs[0].shape())),
            Op::SumPoints => one(g.expand_points(inputs[0].shape()[1])),
            Op::ExpandPoints => one(g.sum_points()),
            Op::GatherPoints(idx) => one(g.scatter_points(idx.clone(), inputs[0].shape()[1])),
            Op::ScatterPoints(idx) => one(g.gather_points(idx.clone())),
            Op::ConcatLast(c1) => {
                let total = *g.shape().last().unwrap();
                Ok(vec![
                    if want(0) { Some(g.slice_last(0, *c1)?) } else { None },
                    if want(1) { Some(g.slice_last(*c1, total - c1)?) } else { None },
                ])
            }
            Op::SliceLast { start } => {
                let total = *inputs[0].shape().last().unwrap();
                one(g.pad_last(*start, total))
            }
            Op::PadLast { start } => {
                let len = *inputs[0].shape().last().unwrap();
                one(g.slice_last(*start, len))
            }
            Op::BatchNorm { xhat, inv_std } => {
                batch_norm_backward(&inputs[1], g, xhat, inv_std, needed)
            }
        }
    }
}

fn batch_norm_backward(
    gamma: &Tensor,
    g: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    needed: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let c = gamma.numel();
    let gd = g.data();
    let rows = gd.len() / c;
    let gam = gamma.data();
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for r in 0..rows {
        for j in 0..c {
            let k = r * c + j;
            sum_g[j] += gd[k];
            sum_gx[j] += gd[k] * xhat[k];
        }
    }
    let dx = if needed[0] {
        let n = rows as f64;
        let mut dx = vec![0.0; gd.len()];
        for r in 0..rows {
            for j in 0..c {
                let k = r * c + j;
                // dxhat = g * gamma; sums of dxhat are gamma * sums of g.
                dx[k] = gam[j] * inv_std[j] / n * (n * gd[k] - sum_g[j] - xhat[k] * sum_gx[j]);
            }
        }
        Some(Tensor::new(dx, g.shape())?)
    } else {
        None
    };
    let dgamma = if needed[1] { Some(Tensor::new(sum_gx, &[c])?) } else { None };
    let dbeta = if needed[2] { Some(Tensor::new(sum_g, &[c])?) } else { None };
    Ok(vec![dx, dgamma, dbeta])
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn rank3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [b, n, c] => Ok((b, n, c)),
        _ => Err(TensorError::Invalid(format!(
            "{op} expects a [B, N, C] tensor, got {:?}",
            t.shape()
        ))),
    }
}

fn last_dim(op: &'static str, t: &Tensor) -> Result<usize> {
    t.shape()
        .last()
        .copied()
        .ok_or_else(|| TensorError::Invalid(format!("{op} needs rank >= 1")))
}

impl Tensor {
    fn zip_with(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(mismatch(op.name(), self.shape(), other.shape()));
        }
        let data: Vec<f64> = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_op(op, vec![self.clone(), other.clone()], self.shape().to_vec(), data)
    }

    fn map_unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&a| f(a)).collect();
        Tensor::from_op(op, vec![self.clone()], self.shape().to_vec(), data)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` with optional transposition of either side.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        let (&[ar, ac], &[br, bc]) = (self.shape(), other.shape()) else {
            return Err(mismatch("matmul", self.shape(), other.shape()));
        };
        let k_a = if ta { ar } else { ac };
        let k_b = if tb { bc } else { br };
        if k_a != k_b {
            return Err(mismatch("matmul", self.shape(), other.shape()));
        }
        let (data, m, n) = gemm::matmul(&self.data(), (ar, ac), ta, &other.data(), (br, bc), tb);
        Tensor::from_op(
            Op::MatMul { ta, tb },
            vec![self.clone(), other.clone()],
            vec![m, n],
            data,
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(mismatch("reshape", self.shape(), shape));
        }
        Tensor::from_op(Op::Reshape, vec![self.clone()], shape.to_vec(), self.to_vec())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Div, |a, b| a / b)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map_unary(Op::Scale(c), |a| a * c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.map_unary(Op::AddScalar, |a| a + c)
    }

    /// Elementwise product with a constant of the same shape.
    pub(crate) fn mul_const(&self, m: Rc<Vec<f64>>) -> Result<Tensor> {
        if m.len() != self.numel() {
            return Err(mismatch("mul_const", self.shape(), &[m.len()]));
        }
        let data: Vec<f64> = self.data().iter().zip(m.iter()).map(|(a, b)| a * b).collect();
        Tensor::from_op(Op::MulConst(m), vec![self.clone()], self.shape().to_vec(), data)
    }

    /// `max(x, slope·x)`; the derivative at exactly zero is `slope`.
    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        let d = self.data();
        let mask: Vec<f64> = d.iter().map(|&x| if x > 0.0 { 1.0 } else { slope }).collect();
        let data: Vec<f64> = d.iter().zip(&mask).map(|(x, m)| x * m).collect();
        drop(d);
        Tensor::from_op(
            Op::LeakyRelu(Rc::new(mask)),
            vec![self.clone()],
            self.shape().to_vec(),
            data,
        )
    }

    /// Hyperbolic tangent, kept strictly inside (−1, 1) where `f64::tanh`
    /// would round to ±1.
    pub fn tanh(&self) -> Result<Tensor> {
        const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
        self.map_unary(Op::Tanh, |x| x.tanh().clamp(-BELOW_ONE, BELOW_ONE))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map_unary(Op::Sigmoid, |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.map_unary(Op::Sqrt, f64::sqrt)
    }

    /// Adds `bias[C]` to every row of a `[..., C]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let c = last_dim("add_bias", self)?;
        if bias.shape() != [c] {
            return Err(mismatch("add_bias", self.shape(), bias.shape()));
        }
        let b = bias.data();
        let data: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % c])
            .collect();
        drop(b);
        Tensor::from_op(
            Op::AddBias,
            vec![self.clone(), bias.clone()],
            self.shape().to_vec(),
            data,
        )
    }

    /// `[..., C] -> [C]`, summing every leading index.
    pub fn sum_leading(&self) -> Result<Tensor> {
        let c = last_dim("sum_leading", self)?;
        let mut out = vec![0.0; c];
        for (i, x) in self.data().iter().enumerate() {
            out[i % c] += x;
        }
        Tensor::from_op(Op::SumLeading, vec![self.clone()], vec![c], out)
    }

    /// `[C] -> shape` where `shape` ends in `C`.
    pub fn expand_leading(&self, shape: &[usize]) -> Result<Tensor> {
        let c = self.numel();
        if self.shape().len() != 1 || shape.last() != Some(&c) {
            return Err(mismatch("expand_leading", self.shape(), shape));
        }
        let d = self.data();
        let data: Vec<f64> = (0..numel(shape)).map(|i| d[i % c]).collect();
        drop(d);
        Tensor::from_op(Op::ExpandLeading, vec![self.clone()], shape.to_vec(), data)
    }

    /// `[..., C] -> [...]`.
    pub fn sum_last(&self) -> Result<Tensor> {
        let c = last_dim("sum_last", self)?;
        let data: Vec<f64> = self.data().chunks(c).map(|r| r.iter().sum()).collect();
        let shape = self.shape()[..self.shape().len() - 1].to_vec();
        Tensor::from_op(Op::SumLast, vec![self.clone()], shape, data)
    }

    /// `[...] -> [..., C]`.
    pub fn expand_last(&self, c: usize) -> Result<Tensor> {
        let data: Vec<f64> = self
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, c))
            .collect();
        let mut shape = self.shape().to_vec();
        shape.push(c);
        Tensor::from_op(Op::ExpandLast, vec![self.clone()], shape, data)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(Op::SumAll, vec![self.clone()], Vec::new(), vec![s])
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand_scalar(&self, shape: &[usize]) -> Result<Tensor> {
        if self.numel() != 1 {
            return Err(mismatch("expand_scalar", self.shape(), shape));
        }
        let v = self.data()[0];
        Tensor::from_op(
            Op::ExpandScalar,
            vec![self.clone()],
            shape.to_vec(),
            vec![v; numel(shape)],
        )
    }

    /// `[B, N, C] -> [B, C]`, summing over points.
    pub fn sum_points(&self) -> Result<Tensor> {
        let (b, n, c) = rank3("sum_points", self)?;
        let d = self.data();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            let acc = &mut out[bi * c..(bi + 1) * c];
            for row in d[bi * n * c..(bi + 1) * n * c].chunks(c) {
                acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
            }
        }
        drop(d);
        Tensor::from_op(Op::SumPoints, vec![self.clone()], vec![b, c], out)
    }

    pub fn mean_points(&self) -> Result<Tensor> {
        let (_, n, _) = rank3("mean_points", self)?;
        self.sum_points()?.scale(1.0 / n as f64)
    }

    /// `[B, C] -> [B, N, C]`, repeating over points.
    pub fn expand_points(&self, n: usize) -> Result<Tensor> {
        let &[b, c] = self.shape() else {
            return Err(mismatch("expand_points", self.shape(), &[0, n, 0]));
        };
        let d = self.data();
        let mut out = Vec::with_capacity(b * n * c);
        for row in d.chunks(c) {
            for _ in 0..n {
                out.extend_from_slice(row);
            }
        }
        drop(d);
        Tensor::from_op(Op::ExpandPoints, vec![self.clone()], vec![b, n, c], out)
    }

    /// `[B, N, C] -> [B, C]` maximum over points; ties go to the lowest index.
    pub fn max_points(&self) -> Result<Tensor> {
        let (b, n, c) = rank3("max_points", self)?;
        if n == 0 {
            return Err(TensorError::Invalid("max_points over zero points".into()));
        }
        let d = self.data();
        let mut idx = vec![0usize; b * c];
        for bi in 0..b {
            for j in 0..c {
                let mut best = d[bi * n * c + j];
                for p in 1..n {
                    let v = d[(bi * n + p) * c + j];
                    if v > best {
                        best = v;
                        idx[bi * c + j] = p;
                    }
                }
            }
        }
        drop(d);
        self.gather_points(Rc::new(idx))
    }

    pub(crate) fn gather_points(&self, idx: Rc<Vec<usize>>) -> Result<Tensor> {
        let (b, n, c) = rank3("gather_points", self)?;
        if idx.len() != b * c || idx.iter().any(|&p| p >= n) {
            return Err(TensorError::Invalid("gather index out of range".into()));
        }
        let d = self.data();
        let out: Vec<f64> = (0..b * c)
            .map(|k| {
                let (bi, j) = (k / c, k % c);
                d[(bi * n + idx[k]) * c + j]
            })
            .collect();
        drop(d);
        Tensor::from_op(Op::GatherPoints(idx), vec![self.clone()], vec![b, c], out)
    }

    pub(crate) fn scatter_points(&self, idx: Rc<Vec<usize>>, n: usize) -> Result<Tensor> {
        let &[b, c] = self.shape() else {
            return Err(mismatch("scatter_points", self.shape(), &[0, n, 0]));
        };
        let d = self.data();
        let mut out = vec![0.0; b * n * c];
        for k in 0..b * c {
            let (bi, j) = (k / c, k % c);
            out[(bi * n + idx[k]) * c + j] += d[k];
        }
        drop(d);
        Tensor::from_op(Op::ScatterPoints(idx), vec![self.clone()], vec![b, n, c], out)
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&self, other: &Tensor) -> Result<Tensor> {
        let c1 = last_dim("concat", self)?;
        let c2 = last_dim("concat", other)?;
        let lead = &self.shape()[..self.shape().len() - 1];
        if lead != &other.shape()[..other.shape().len() - 1] {
            return Err(mismatch("concat", self.shape(), other.shape()));
        }
        let (a, b) = (self.data(), other.data());
        let mut out = Vec::with_capacity(a.len() + b.len());
        for (ra, rb) in a.chunks(c1).zip(b.chunks(c2)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        drop((a, b));
        let mut shape = lead.to_vec();
        shape.push(c1 + c2);
        Tensor::from_op(Op::ConcatLast(c1), vec![self.clone(), other.clone()], shape, out)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Tensor> {
        let c = last_dim("slice", self)?;
        if start + len > c {
            return Err(TensorError::Invalid(format!(
                "slice {start}..{} out of range for width {c}",
                start + len
            )));
        }
        let out: Vec<f64> = self
            .data()
            .chunks(c)
            .flat_map(|r| r[start..start + len].to_vec())
            .collect();
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Tensor::from_op(Op::SliceLast { start }, vec![self.clone()], shape, out)
    }

    /// Embeds the last axis at offset `start` of a zero tensor of width `total`.
    pub(crate) fn pad_last(&self, start: usize, total: usize) -> Result<Tensor> {
        let c = last_dim("pad", self)?;
        if start + c > total {
            return Err(TensorError::Invalid("pad out of range".into()));
        }
        let mut out = Vec::with_capacity(self.numel() / c.max(1) * total);
        for r in self.data().chunks(c) {
            out.extend(std::iter::repeat_n(0.0, start));
            out.extend_from_slice(r);
            out.extend(std::iter::repeat_n(0.0, total - start - c));
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = total;
        Tensor::from_op(Op::PadLast { start }, vec![self.clone()], shape, out)
    }
}

/// Train-mode batch normalization over the rows of `x[R, C]`. Returns the
/// output plus the batch mean and biased variance per channel.
pub(crate) fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let &[rows, c] = x.shape() else {
        return Err(mismatch("batch_norm", x.shape(), gamma.shape()));
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(mismatch("batch_norm", x.shape(), gamma.shape()));
    }
    if rows < 2 {
        return Err(TensorError::BatchTooSmall(rows));
    }
    let d = x.data();
    let n = rows as f64;
    let mut mean = vec![0.0; c];
    for row in d.chunks(c) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for row in d.chunks(c) {
        for j in 0..c {
            let t = row[j] - mean[j];
            var[j] += t * t;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (gam, bet) = (gamma.data(), beta.data());
    let mut xhat = vec![0.0; d.len()];
    let mut out = vec![0.0; d.len()];
    for k in 0..d.len() {
        let j = k % c;
        xhat[k] = (d[k] - mean[j]) * inv_std[j];
        out[k] = gam[j] * xhat[k] + bet[j];
    }
    drop((d, gam, bet));
    let y = Tensor::from_op(
        Op::BatchNorm {
            xhat: Rc::new(xhat),
            inv_std: Rc::new(inv_std),
        },
        vec![x.clone(), gamma.clone(), beta.clone()],
        vec![rows, c],
        out,
    )?;
    Ok((y, mean, var))
}
