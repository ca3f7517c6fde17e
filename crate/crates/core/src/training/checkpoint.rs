use std::collections::BTreeMap;
use std::path::Path;

use super::{AdamState, Result, TrainError};
use crate::config::RunConfig;
use crate::model::{NamedTensors, StarNet};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"STNC";
pub const CHECKPOINT_VERSION: u16 = 1;
/// Metadata key holding the number of completed epochs of the stage.
const EPOCHS_KEY: &str = "ckpt.completed_epochs";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    AutoEncoder = 1,
    Gan = 2,
}

impl Stage {
    fn from_tag(tag: u8) -> Result<Stage> {
        match tag {
            1 => Ok(Stage::AutoEncoder),
            2 => Ok(Stage::Gan),
            t => Err(TrainError::Corrupt(format!("unknown stage tag {t}"))),
        }
    }

    /// Tensor name prefixes the stage owns.
    pub fn prefixes(self) -> &'static [&'static str] {
        match self {
            Stage::AutoEncoder => &["enc.", "dec."],
            Stage::Gan => &["enc.", "dec.", "map.", "disc."],
        }
    }
}

/// Values are stored as `f32`; capturing rounds the live tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn from_tensor(name: &str, t: &Tensor) -> Self {
        TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRecord {
    pub name: String,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// `m.<param>` and `v.<param>` moment tensors, in parameter order.
    pub moments: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub tensors: Vec<TensorRecord>,
    pub optimizers: Vec<OptimizerRecord>,
    /// Resolved run configuration plus `ckpt.*` bookkeeping keys.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    /// Parameters and buffers of `net` owned by `stage`.
    pub fn capture(stage: Stage, net: &StarNet, config: &RunConfig, completed_epochs: usize) -> Self {
        let nt = net.named_tensors();
        let tensors = nt
            .all()
            .filter(|(n, _)| stage.prefixes().iter().any(|p| n.starts_with(p)))
            .map(|(n, t)| TensorRecord::from_tensor(n, t))
            .collect();
        let mut meta: BTreeMap<String, String> = config.resolved().into_iter().collect();
        meta.insert(EPOCHS_KEY.to_string(), completed_epochs.to_string());
        Checkpoint {
            stage,
            tensors,
            optimizers: Vec::new(),
            meta,
        }
    }

    /// Records an optimizer; `names` label its tensors in parameter order.
    pub fn add_optimizer(&mut self, name: &str, opt: &AdamState, names: &[String]) {
        let mut moments = Vec::new();
        for ((n, m), v) in names.iter().zip(&opt.m).zip(&opt.v) {
            for (kind, vals) in [("m", m), ("v", v)] {
                moments.push(TensorRecord {
                    name: format!("{kind}.{n}"),
                    shape: vec![vals.len()],
                    data: vals.iter().map(|&x| x as f32).collect(),
                });
            }
        }
        self.optimizers.push(OptimizerRecord {
            name: name.to_string(),
            step: opt.step,
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            moments,
        });
    }

    /// Rebuilds a stored optimizer for `params`, checking every moment size.
    pub fn optimizer(&self, name: &str, params: &[Tensor]) -> Result<Option<AdamState>> {
        let Some(rec) = self.optimizers.iter().find(|o| o.name == name) else {
            return Ok(None);
        };
        if rec.moments.len() != 2 * params.len() {
            return Err(TrainError::Corrupt(format!(
                "optimizer '{name}' has {} moment tensors for {} parameters",
                rec.moments.len(),
                params.len()
            )));
        }
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (p, pair) in params.iter().zip(rec.moments.chunks(2)) {
            if pair.iter().any(|t| t.data.len() != p.numel()) {
                return Err(TrainError::Corrupt(format!(
                    "optimizer '{name}' moment {} does not match its parameter",
                    pair[0].name
                )));
            }
            m.push(pair[0].data.iter().map(|&x| x as f64).collect());
            v.push(pair[1].data.iter().map(|&x| x as f64).collect());
        }
        Ok(Some(AdamState {
            lr: rec.lr,
            beta1: rec.beta1,
            beta2: rec.beta2,
            eps: rec.eps,
            step: rec.step,
            m,
            v,
        }))
    }

    pub fn completed_epochs(&self) -> usize {
        self.meta
            .get(EPOCHS_KEY)
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    }

    /// The run configuration stored with the checkpoint.
    pub fn run_config(&self) -> Result<RunConfig> {
        let text: String = self
            .meta
            .iter()
            .filter(|(k, _)| !k.starts_with("ckpt."))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        RunConfig::parse(&text).map_err(|e| TrainError::Corrupt(format!("config snapshot: {e}")))
    }

    /// Copies every stored tensor under `prefixes` into `named`. Each target
    /// under those prefixes must be present with the same shape.
    pub fn restore_into(&self, named: &NamedTensors, prefixes: &[&str]) -> Result<()> {
        let by_name: BTreeMap<&str, &TensorRecord> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, t) in named.all() {
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let rec = by_name
                .get(name.as_str())
                .ok_or_else(|| TrainError::Corrupt(format!("missing tensor {name}")))?;
            if rec.shape != t.shape() {
                return Err(TrainError::Corrupt(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    rec.shape,
                    t.shape()
                )));
            }
            let mut d = t.data_mut();
            for (dst, &src) in d.iter_mut().zip(&rec.data) {
                *dst = src as f64;
            }
        }
        Ok(())
    }

    /// A network built from the stored configuration with every tensor the
    /// stage owns restored. Other networks keep their seeded initialization.
    pub fn build_model(&self) -> Result<StarNet> {
        let cfg = self.run_config()?;
        let model_cfg = cfg
            .model_config()
            .map_err(|e| TrainError::Corrupt(format!("config snapshot: {e}")))?;
        let seed = cfg.seed().unwrap_or(0);
        let net = StarNet::new(&model_cfg, seed)?;
        self.restore_into(&net.named_tensors(), self.stage.prefixes())?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        w.push(self.stage as u8);
        write_tensors(&mut w, &self.tensors);
        w.extend_from_slice(&(self.optimizers.len() as u32).to_le_bytes());
        for o in &self.optimizers {
            write_str(&mut w, &o.name);
            w.extend_from_slice(&o.step.to_le_bytes());
            for x in [o.lr, o.beta1, o.beta2, o.eps] {
                w.extend_from_slice(&x.to_le_bytes());
            }
            write_tensors(&mut w, &o.moments);
        }
        let text: String = self.meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        w.extend_from_slice(&(text.len() as u32).to_le_bytes());
        w.extend_from_slice(text.as_bytes());
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TrainError::Corrupt("bad magic, not a checkpoint".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let stage = Stage::from_tag(r.u8()?)?;
        let tensors = r.tensors()?;
        let n_opt = r.u32()?;
        let mut optimizers = Vec::new();
        for _ in 0..n_opt {
            let name = r.string()?;
            let step = r.u64()?;
            let [lr, beta1, beta2, eps] = [(); 4].map(|_| r.f64());
            optimizers.push(OptimizerRecord {
                name,
                step,
                lr: lr?,
                beta1: beta1?,
                beta2: beta2?,
                eps: eps?,
                moments: r.tensors()?,
            });
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| TrainError::Corrupt("config snapshot is not UTF-8".into()))?;
        if r.pos != bytes.len() {
            return Err(TrainError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| TrainError::Corrupt(format!("bad snapshot line '{line}'")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        Ok(Checkpoint {
            stage,
            tensors,
            optimizers,
            meta,
        })
    }
}

fn write_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u16).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

fn write_tensors(w: &mut Vec<u8>, ts: &[TensorRecord]) {
    w.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for t in ts {
        write_str(w, &t.name);
        w.push(t.shape.len() as u8);
        for &d in &t.shape {
            w.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &t.data {
            w.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(TrainError::Corrupt(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TrainError::Corrupt("tensor name is not UTF-8".into()))
    }

    fn tensors(&mut self) -> Result<Vec<TensorRecord>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u8()? as usize;
            let shape = (0..rank)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| TrainError::Corrupt(format!("tensor {name} is too large")))?;
            let raw = self.take(numel.checked_mul(4).ok_or_else(|| {
                TrainError::Corrupt(format!("tensor {name} is too large"))
            })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            out.push(TensorRecord { name, shape, data });
        }
        Ok(out)
    }
}

/// Atomic write: temporary file in the same directory, then rename.
pub fn save_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    Ok(crate::data::write_atomic(path, &c.to_bytes())?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Checkpoint::from_bytes(&bytes)
}
