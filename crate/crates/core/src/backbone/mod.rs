//! The shared joint network.
//!
//! One stream: row 0 is the projected continuous state plus the image-time
//! conditioning `c_t`, rows 1.. are token + positional embeddings plus the
//! text-time conditioning `c_tau`. Blocks are residual attention and
//! feedforward layers without normalization; every block linear carries a
//! LoRA adapter. Four heads read the final stream: velocity from row 0,
//! gate/rate/token from every text row (EOS included).
//!
//! Weights are stored in×out (`y = x·W`).

mod lora;
mod params;

use rand::Rng;
use thiserror::Error;

use crate::editflow::{EditError, InsertionPrediction, SeqSpec, TokenSequence};
use crate::ndcore::{sinusoid, Tape, Tensor, TensorError, Var};
use crate::rng::stream;

pub use lora::{lora_effective, AdaptedLinear};
pub use params::{Group, ModelParams, ParamId};

/// Added to the softplus rate so it never reaches zero in floating point.
pub const RATE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("sequence of length {len} overflows max_len {max_len}")]
    Overflow { len: usize, max_len: usize },
    #[error("continuous input has dimension {got}, model expects {want}")]
    Dimension { got: usize, want: usize },
    #[error("time {0} outside [0, 1]")]
    Time(f64),
    #[error("invalid model config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub vocab_size: usize,
    pub eos: usize,
    pub max_len: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub time_dim: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 8,
            vocab_size: 20,
            eos: 19,
            max_len: 16,
            hidden: 64,
            blocks: 2,
            heads: 2,
            ff_mult: 4,
            time_dim: 16,
            lora_rank: 4,
            lora_alpha: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn seq_spec(&self) -> SeqSpec {
        SeqSpec {
            vocab_size: self.vocab_size,
            eos: self.eos,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d == 0 || self.hidden == 0 || self.blocks == 0 || self.time_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad("hidden must be a positive multiple of heads");
        }
        if self.vocab_size < 2 || self.eos >= self.vocab_size {
            return bad("eos must lie inside a vocabulary of at least 2 tokens");
        }
        if self.max_len == 0 || self.ff_mult == 0 {
            return bad("max_len and ff_mult must be positive");
        }
        if self.lora_rank == 0 || !(self.lora_alpha > 0.0) {
            return bad("lora rank and alpha must be positive");
        }
        Ok(())
    }
}

/// Image-time and text-time conditioning vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub c_t: Vec<f64>,
    pub c_tau: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Block {
    q: AdaptedLinear,
    k: AdaptedLinear,
    v: AdaptedLinear,
    o: AdaptedLinear,
    ff1: AdaptedLinear,
    ff2: AdaptedLinear,
}

#[derive(Debug, Clone)]
struct Layout {
    vec_in_w: ParamId,
    vec_in_b: ParamId,
    tok_emb: ParamId,
    pos_emb: ParamId,
    time1_w: ParamId,
    time1_b: ParamId,
    time2_w: ParamId,
    time2_b: ParamId,
    delta_w: ParamId,
    delta_s: ParamId,
    blocks: Vec<Block>,
    vel_w: ParamId,
    vel_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
    rate_w: ParamId,
    rate_b: ParamId,
    tok_w: ParamId,
    tok_b: ParamId,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// 1×d.
    pub velocity: Var,
    /// L×1 gate probabilities.
    pub gate: Var,
    /// L×1 gate logits (before the sigmoid).
    pub gate_logit: Var,
    /// L×1 positive rates.
    pub rate: Var,
    /// L×(|V|−1) logits over insertable tokens.
    pub token_logits: Var,
}

/// Model structure: configuration plus the id of every parameter.
#[derive(Debug, Clone)]
pub struct Backbone {
    cfg: ModelConfig,
    layout: Layout,
}

fn row(t: &Tensor) -> Tensor {
    t.reshape(vec![1, t.len()]).expect("row reshape")
}

impl Backbone {
    /// Fresh parameters. LoRA up-factors and the gate scalar start at zero,
    /// so the adapted model equals the base model exactly.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<(Self, ModelParams), ModelError> {
        cfg.validate()?;
        let mut rng = stream(seed, 0x6261_636b);
        let mut p = ModelParams::empty();
        let h = cfg.hidden;
        let ff = h * cfg.ff_mult;
        let std_in = |n: usize| 1.0 / (n as f64).sqrt();
        let lora_scale = cfg.lora_alpha / cfg.lora_rank as f64;

        let vec_in_w = p.push_normal("vec_in.w", Group::Base, &[cfg.d, h], std_in(cfg.d), &mut rng);
        let vec_in_b = p.push("vec_in.b", Group::Base, Tensor::zeros(&[h]));
        let tok_emb = p.push_normal("tok_emb", Group::Base, &[cfg.vocab_size, h], 0.5, &mut rng);
        let pos_emb = p.push_normal("pos_emb", Group::Base, &[cfg.max_len, h], 0.5, &mut rng);
        let time1_w = p.push_normal(
            "time.l1.w",
            Group::Base,
            &[cfg.time_dim, h],
            std_in(cfg.time_dim),
            &mut rng,
        );
        let time1_b = p.push("time.l1.b", Group::Base, Tensor::zeros(&[h]));
        let time2_w = p.push_normal("time.l2.w", Group::Base, &[h, h], std_in(h), &mut rng);
        let time2_b = p.push("time.l2.b", Group::Base, Tensor::zeros(&[h]));
        let delta_w = p.push_normal("tau_path.w_delta", Group::Adapter, &[h, h], std_in(h), &mut rng);
        let delta_s = p.push("tau_path.s", Group::Adapter, Tensor::vector(vec![0.0]));

        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let mut linear = |name: &str, inp: usize, out: usize, std: f64, bias: bool, rng: &mut rand_chacha::ChaCha8Rng| {
                let prefix = format!("block{b}.{name}");
                let weight = p.push_normal(&format!("{prefix}.w"), Group::Base, &[inp, out], std, rng);
                let bias = bias.then(|| p.push(format!("{prefix}.b"), Group::Base, Tensor::zeros(&[out])));
                let down = p.push_normal(
                    &format!("{prefix}.lora_a"),
                    Group::Adapter,
                    &[inp, cfg.lora_rank],
                    std_in(inp),
                    rng,
                );
                let up = p.push(
                    format!("{prefix}.lora_b"),
                    Group::Adapter,
                    Tensor::zeros(&[cfg.lora_rank, out]),
                );
                AdaptedLinear {
                    weight,
                    bias,
                    down,
                    up,
                    scale: lora_scale,
                }
            };
            blocks.push(Block {
                q: linear("q", h, h, std_in(h), false, &mut rng),
                k: linear("k", h, h, std_in(h), false, &mut rng),
                v: linear("v", h, h, std_in(h), false, &mut rng),
                o: linear("o", h, h, 0.5 * std_in(h), false, &mut rng),
                ff1: linear("ff1", h, ff, std_in(h), true, &mut rng),
                ff2: linear("ff2", ff, h, 0.5 * std_in(ff), true, &mut rng),
            });
        }

        let vel_w = p.push_normal("head.velocity.w", Group::Base, &[h, cfg.d], std_in(h), &mut rng);
        let vel_b = p.push("head.velocity.b", Group::Base, Tensor::zeros(&[cfg.d]));
        let gate_w = p.push_normal("head.gate.w", Group::Head, &[h, 1], 0.1 * std_in(h), &mut rng);
        let gate_b = p.push("head.gate.b", Group::Head, Tensor::zeros(&[1]));
        let rate_w = p.push_normal("head.rate.w", Group::Head, &[h, 1], 0.1 * std_in(h), &mut rng);
        // softplus(0.5413) ≈ 1
        let rate_b = p.push("head.rate.b", Group::Head, Tensor::vector(vec![0.5413]));
        let n_ins = cfg.vocab_size - 1;
        let tok_w = p.push_normal("head.token.w", Group::Head, &[h, n_ins], 0.1 * std_in(h), &mut rng);
        let tok_b = p.push("head.token.b", Group::Head, Tensor::zeros(&[n_ins]));

        let layout = Layout {
            vec_in_w,
            vec_in_b,
            tok_emb,
            pos_emb,
            time1_w,
            time1_b,
            time2_w,
            time2_b,
            delta_w,
            delta_s,
            blocks,
            vel_w,
            vel_b,
            gate_w,
            gate_b,
            rate_w,
            rate_b,
            tok_w,
            tok_b,
        };
        Ok((Self { cfg, layout }, p))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Parameter id of the tau-path gate scalar `s`.
    pub fn gate_scalar_id(&self) -> ParamId {
        self.layout.delta_s
    }

    /// `(trainable, total, fraction)` where trainable means adapter + head.
    pub fn trainable_report(params: &ModelParams) -> (usize, usize, f64) {
        let tr = params.count(&[Group::Adapter, Group::Head]);
        let total = params.total_count();
        (tr, total, tr as f64 / total as f64)
    }

    fn bind(&self, tape: &mut Tape, params: &ModelParams, trainable: &[bool], id: ParamId) -> Var {
        tape.param(id, params.get(id), trainable[id])
    }

    fn time_mlp(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        trainable: &[bool],
        time: f64,
    ) -> Result<Var, TensorError> {
        let l = &self.layout;
        let s = tape.constant(row(&sinusoid(time, self.cfg.time_dim)));
        let w1 = self.bind(tape, params, trainable, l.time1_w);
        let b1 = self.bind(tape, params, trainable, l.time1_b);
        let w2 = self.bind(tape, params, trainable, l.time2_w);
        let b2 = self.bind(tape, params, trainable, l.time2_b);
        let h = tape.matmul(s, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.silu(h)?;
        let h = tape.matmul(h, w2)?;
        tape.add_row(h, b2)
    }

    /// `c_t = e_t`, `c_tau = e_t + tanh(s)·(e_τ − e_t)·W_δ`. With the adapters
    /// disabled the delta path is off and `c_tau = c_t`.
    pub fn embed_times_tape(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        trainable: &[bool],
        t: f64,
        tau: f64,
        lora_enabled: bool,
    ) -> Result<(Var, Var), ModelError> {
        for time in [t, tau] {
            if !(0.0..=1.0).contains(&time) {
                return Err(ModelError::Time(time));
            }
        }
        let e_t = self.time_mlp(tape, params, trainable, t)?;
        if !lora_enabled {
            return Ok((e_t, e_t));
        }
        let e_tau = self.time_mlp(tape, params, trainable, tau)?;
        let diff = tape.sub(e_tau, e_t)?;
        let wd = self.bind(tape, params, trainable, self.layout.delta_w);
        let s = self.bind(tape, params, trainable, self.layout.delta_s);
        let delta = tape.matmul(diff, wd)?;
        let gate = tape.tanh(s)?;
        let delta = tape.scale_by(delta, gate)?;
        let c_tau = tape.add(e_t, delta)?;
        Ok((e_t, c_tau))
    }

    pub fn embed_times(
        &self,
        params: &ModelParams,
        t: f64,
        tau: f64,
        lora_enabled: bool,
    ) -> Result<Conditioning, ModelError> {
        let mut tape = Tape::new();
        let frozen = vec![false; params.len()];
        let (ct, ctau) = self.embed_times_tape(&mut tape, params, &frozen, t, tau, lora_enabled)?;
        Ok(Conditioning {
            c_t: tape.value(ct).values().to_vec(),
            c_tau: tape.value(ctau).values().to_vec(),
        })
    }

    fn attention(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        trainable: &[bool],
        blk: &Block,
        x: Var,
        lora: bool,
    ) -> Result<Var, TensorError> {
        let q = blk.q.apply(tape, params, trainable, x, lora)?;
        let k = blk.k.apply(tape, params, trainable, x, lora)?;
        let v = blk.v.apply(tape, params, trainable, x, lora)?;
        let dh = self.cfg.hidden / self.cfg.heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.cfg.heads);
        for head in 0..self.cfg.heads {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, inv)?;
            let attn = tape.softmax(scores)?;
            outs.push(tape.matmul(attn, vh)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        blk.o.apply(tape, params, trainable, cat, lora)
    }

    /// Records a forward pass on `tape`. `trainable[id]` decides whether the
    /// parameter receives a gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        trainable: &[bool],
        x_t: &[f64],
        t: f64,
        corrupted: &TokenSequence,
        tau: f64,
        lora_enabled: bool,
    ) -> Result<ForwardVars, ModelError> {
        let cfg = &self.cfg;
        let l = &self.layout;
        if x_t.len() != cfg.d {
            return Err(ModelError::Dimension {
                got: x_t.len(),
                want: cfg.d,
            });
        }
        let n = corrupted.len();
        if n > cfg.max_len {
            return Err(ModelError::Overflow {
                len: n,
                max_len: cfg.max_len,
            });
        }
        let (c_t, c_tau) = self.embed_times_tape(tape, params, trainable, t, tau, lora_enabled)?;

        let xin = tape.constant(Tensor::matrix(1, cfg.d, x_t.to_vec())?);
        let w = self.bind(tape, params, trainable, l.vec_in_w);
        let b = self.bind(tape, params, trainable, l.vec_in_b);
        let v0 = tape.matmul(xin, w)?;
        let v0 = tape.add_row(v0, b)?;
        let v0 = tape.add(v0, c_t)?;

        let mut onehot = vec![0.0; n * cfg.vocab_size];
        for (i, &tok) in corrupted.tokens().iter().enumerate() {
            onehot[i * cfg.vocab_size + tok] = 1.0;
        }
        let oh = tape.constant(Tensor::matrix(n, cfg.vocab_size, onehot)?);
        let emb = self.bind(tape, params, trainable, l.tok_emb);
        let pos = self.bind(tape, params, trainable, l.pos_emb);
        let te = tape.matmul(oh, emb)?;
        let pe = tape.slice_rows(pos, 0, n)?;
        let te = tape.add(te, pe)?;
        let te = tape.add_row(te, c_tau)?;

        let mut hs = tape.concat_rows(&[v0, te])?;
        for blk in &l.blocks {
            let a = self.attention(tape, params, trainable, blk, hs, lora_enabled)?;
            hs = tape.add(hs, a)?;
            let f = blk.ff1.apply(tape, params, trainable, hs, lora_enabled)?;
            let f = tape.silu(f)?;
            let f = blk.ff2.apply(tape, params, trainable, f, lora_enabled)?;
            hs = tape.add(hs, f)?;
        }

        let hv = tape.slice_rows(hs, 0, 1)?;
        let ht = tape.slice_rows(hs, 1, n)?;
        let linear = |tape: &mut Tape, x: Var, w: ParamId, b: ParamId| -> Result<Var, TensorError> {
            let w = tape.param(w, params.get(w), trainable[w]);
            let b = tape.param(b, params.get(b), trainable[b]);
            let y = tape.matmul(x, w)?;
            tape.add_row(y, b)
        };
        let velocity = linear(tape, hv, l.vel_w, l.vel_b)?;
        let gate_logit = linear(tape, ht, l.gate_w, l.gate_b)?;
        let gate = tape.sigmoid(gate_logit)?;
        let rate_raw = linear(tape, ht, l.rate_w, l.rate_b)?;
        let rate = tape.softplus(rate_raw)?;
        let floor = tape.constant(Tensor::vector(vec![RATE_FLOOR]));
        let rate = tape.add_row(rate, floor)?;
        let token_logits = linear(tape, ht, l.tok_w, l.tok_b)?;
        Ok(ForwardVars {
            velocity,
            gate,
            gate_logit,
            rate,
            token_logits,
        })
    }

    /// Plain evaluation: velocity and per-position insertion prediction.
    pub fn predict(
        &self,
        params: &ModelParams,
        x_t: &[f64],
        t: f64,
        corrupted: &TokenSequence,
        tau: f64,
        lora_enabled: bool,
    ) -> Result<(Vec<f64>, InsertionPrediction), ModelError> {
        let mut tape = Tape::new();
        let frozen = vec![false; params.len()];
        let fv = self.forward(&mut tape, params, &frozen, x_t, t, corrupted, tau, lora_enabled)?;
        let velocity = tape.value(fv.velocity).values().to_vec();
        let pred = self.insertion_prediction(&tape, &fv);
        Ok((velocity, pred))
    }

    /// Velocity only; the text heads are still computed but discarded.
    pub fn velocity(
        &self,
        params: &ModelParams,
        x_t: &[f64],
        t: f64,
        y: &TokenSequence,
        tau: f64,
        lora_enabled: bool,
    ) -> Result<Vec<f64>, ModelError> {
        self.predict(params, x_t, t, y, tau, lora_enabled).map(|(v, _)| v)
    }

    /// Converts recorded head outputs into an [`InsertionPrediction`] over the
    /// full vocabulary (zero mass on EOS).
    pub fn insertion_prediction(&self, tape: &Tape, fv: &ForwardVars) -> InsertionPrediction {
        let spec = self.cfg.seq_spec();
        let gate = tape.value(fv.gate).values().to_vec();
        let rate = tape.value(fv.rate).values().to_vec();
        let logits = tape.value(fv.token_logits);
        let n_ins = logits.cols();
        let token_dist = logits
            .values()
            .chunks(n_ins)
            .map(|r| {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                let mut full = vec![0.0; spec.vocab_size];
                for (j, p) in e.into_iter().enumerate() {
                    full[spec.token_of_insertable(j)] = p / z;
                }
                full
            })
            .collect();
        InsertionPrediction {
            gate,
            rate,
            token_dist,
        }
    }

    /// Random perturbation of every adapter parameter (tests and demos use it
    /// to move away from the exact-identity initialization).
    pub fn perturb_adapters<R: Rng>(&self, params: &mut ModelParams, std: f64, rng: &mut R) {
        for id in params.ids() {
            if params.group(id) == Group::Adapter {
                let t = params.get(id);
                let v = t
                    .values()
                    .iter()
                    .map(|x| x + std * rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                params.set(id, t.with_values(v));
            }
        }
    }
}
