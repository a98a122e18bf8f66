//! `DFLW` checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DFLW" | version u32 | step u64 | config digest [32]
//! entry count u64
//! per entry: name len u32 | name utf-8 | rank u32 | extents u64 × rank | values f64 × Π extents
//! metadata len u64 | metadata utf-8 (key=value lines)
//! ```
//!
//! Entries are the model parameters under their own names, then the
//! optimizer moments (`adam.m/…`, `adam.v/…`) and the weight EMA (`ema/…`).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::backbone::{ModelParams, ParamId};
use crate::ndcore::Tensor;
use crate::trainer::{AdamW, BalanceState, Phase, TrainState};

pub const MAGIC: &[u8; 4] = b"DFLW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("config digest mismatch: checkpoint {stored}, config {current}")]
    Digest { stored: String, current: String },
}

/// Everything needed to continue or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Total optimizer steps across all phases.
    pub step: u64,
    pub digest: [u8; 32],
    pub params: ModelParams,
    pub state: TrainState,
    /// Rendered config, echoed into the metadata block.
    pub config: String,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor) -> std::io::Result<()> {
    put_u32(w, name.len() as u32)?;
    w.write_all(name.as_bytes())?;
    put_u32(w, t.shape().len() as u32)?;
    for &e in t.shape() {
        put_u64(w, e as u64)?;
    }
    for &v in t.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn bits(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unbits(s: &str) -> Result<f64, CheckpointError> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| CheckpointError::Format(format!("bad float bits {s:?}")))
}

fn moments_of(params: &ModelParams, m: &BTreeMap<ParamId, Vec<f64>>) -> Vec<(ParamId, Tensor)> {
    m.iter()
        .map(|(&id, v)| (id, Tensor::with_values(params.get(id), v.clone())))
        .collect()
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u64(&mut w, self.step)?;
        w.write_all(&self.digest)?;
        let p = &self.params;
        let m = moments_of(p, &self.state.opt.m);
        let v = moments_of(p, &self.state.opt.v);
        put_u64(&mut w, (2 * p.len() + m.len() + v.len()) as u64)?;
        for id in p.ids() {
            put_tensor(&mut w, p.name(id), p.get(id))?;
        }
        for (prefix, list) in [("adam.m/", &m), ("adam.v/", &v)] {
            for (id, t) in list.iter() {
                put_tensor(&mut w, &format!("{prefix}{}", p.name(*id)), t)?;
            }
        }
        for id in self.state.ema.ids() {
            put_tensor(&mut w, &format!("ema/{}", p.name(id)), self.state.ema.get(id))?;
        }
        let meta = self.metadata();
        put_u64(&mut w, meta.len() as u64)?;
        w.write_all(meta.as_bytes())?;
        Ok(())
    }

    fn metadata(&self) -> String {
        let s = &self.state;
        let b = &s.balance;
        let mut out = format!(
            "phase={}\nphase_step={}\nadam_step={}\nlambda_txt={}\nbalance.beta={}\nbalance.eps={}\nbalance.ratio_scale={}\nbalance.every={}\nbalance.probe_batch={}\nrng=counter:{}\n",
            s.phase.as_str(),
            s.step,
            s.opt.step,
            bits(b.lambda_txt),
            bits(b.beta),
            bits(b.eps),
            bits(b.ratio_scale),
            b.estimate_every,
            b.probe_batch,
            s.step,
        );
        for line in self.config.lines() {
            out.push_str("config.");
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    /// Reads a checkpoint whose tensors must match `template` by name and
    /// shape (the parameters of a freshly initialized model).
    pub fn read<R: Read>(r: R, template: &ModelParams) -> Result<Self, CheckpointError> {
        RawCheckpoint::read(r)?.bind(template)
    }

    pub fn check_digest(&self, current: &[u8; 32], force: bool) -> Result<(), CheckpointError> {
        if &self.digest == current || force {
            Ok(())
        } else {
            Err(CheckpointError::Digest {
                stored: super::config::hex(&self.digest),
                current: super::config::hex(current),
            })
        }
    }
}

/// A checkpoint parsed without reference to a model.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub version: u32,
    pub step: u64,
    pub digest: [u8; 32],
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub metadata: String,
}

impl RawCheckpoint {
    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let step = read_u64(&mut r)?;
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let count = read_u64(&mut r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            tensors.push(read_tensor(&mut r)?);
        }
        let len = read_u64(&mut r)?;
        if len > 1 << 24 {
            return Err(CheckpointError::Format("metadata too large".into()));
        }
        let mut meta = vec![0u8; len as usize];
        r.read_exact(&mut meta)?;
        let metadata = String::from_utf8(meta).map_err(|_| CheckpointError::Format("metadata is not utf-8".into()))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self {
            version,
            step,
            digest,
            tensors,
            metadata,
        })
    }

    /// The echoed config, one `key=value` per line.
    pub fn config(&self) -> String {
        self.metadata
            .lines()
            .filter_map(|l| l.strip_prefix("config."))
            .map(|l| format!("{l}\n"))
            .collect()
    }

    pub fn bind(self, template: &ModelParams) -> Result<Checkpoint, CheckpointError> {
        let mut params = template.clone();
        let mut ema = template.clone();
        let mut opt = AdamW::new();
        let mut seen = vec![false; template.len()];
        let config = self.config();
        for (name, shape, values) in self.tensors {
            let (kind, base) = if let Some(n) = name.strip_prefix("adam.m/") {
                (1, n)
            } else if let Some(n) = name.strip_prefix("adam.v/") {
                (2, n)
            } else if let Some(n) = name.strip_prefix("ema/") {
                (3, n)
            } else {
                (0, name.as_str())
            };
            let id = template
                .id_of(base)
                .ok_or_else(|| CheckpointError::Format(format!("unknown tensor {name:?}")))?;
            if template.get(id).shape() != shape.as_slice() {
                return Err(CheckpointError::Format(format!(
                    "tensor {name:?} has shape {shape:?}, model wants {:?}",
                    template.get(id).shape()
                )));
            }
            match kind {
                0 => {
                    seen[id] = true;
                    params.set(id, template.get(id).with_values(values));
                }
                1 => {
                    opt.m.insert(id, values);
                }
                2 => {
                    opt.v.insert(id, values);
                }
                _ => ema.set(id, template.get(id).with_values(values)),
            }
        }
        if let Some(id) = seen.iter().position(|s| !s) {
            return Err(CheckpointError::Format(format!("missing tensor {:?}", template.name(id))));
        }
        let kv: BTreeMap<&str, &str> = self
            .metadata
            .lines()
            .filter(|l| !l.starts_with("config."))
            .filter_map(|l| l.split_once('='))
            .collect();
        let field = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| CheckpointError::Format(format!("metadata lacks {k}")))
        };
        let int = |k: &str| -> Result<u64, CheckpointError> {
            field(k)?
                .parse()
                .map_err(|_| CheckpointError::Format(format!("bad {k}")))
        };
        let phase: Phase = field("phase")?.parse().map_err(CheckpointError::Format)?;
        opt.step = int("adam_step")?;
        let balance = BalanceState {
            lambda_txt: unbits(field("lambda_txt")?)?,
            beta: unbits(field("balance.beta")?)?,
            eps: unbits(field("balance.eps")?)?,
            ratio_scale: unbits(field("balance.ratio_scale")?)?,
            estimate_every: int("balance.every")?,
            probe_batch: int("balance.probe_batch")? as usize,
        };
        let state = TrainState {
            phase,
            step: int("phase_step")?,
            opt,
            ema,
            balance,
        };
        Ok(Checkpoint {
            step: self.step,
            digest: self.digest,
            params,
            state,
            config,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Vec<usize>, Vec<f64>), CheckpointError> {
    let n = read_u32(r)? as usize;
    if n > 4096 {
        return Err(CheckpointError::Format("tensor name too long".into()));
    }
    let mut name = vec![0u8; n];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| CheckpointError::Format("tensor name is not utf-8".into()))?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(CheckpointError::Format(format!("rank {rank} of {name:?}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let size: usize = shape.iter().product();
    if size > 1 << 28 {
        return Err(CheckpointError::Format(format!("tensor {name:?} too large")));
    }
    let mut values = Vec::with_capacity(size);
    let mut b = [0u8; 8];
    for _ in 0..size {
        r.read_exact(&mut b)?;
        values.push(f64::from_le_bytes(b));
    }
    Ok((name, shape, values))
}
