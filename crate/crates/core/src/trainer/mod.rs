//! Training: the dual-timestep objective, gradient balancing, teacher
//! matching and the optimizer, run in three phases.
//!
//! * `Base`: only base weights train, on text→vector flow matching with
//!   clean captions and the adapters off.
//! * `Uplift`: base frozen; adapters, the tau path and the text heads train
//!   on the joint objective under a (t, τ) schedule.
//! * `Vqa`: same trainable set, text-only loss on question prompts whose
//!   answer span is the only corrupted region.
//!
//! Each batch element gets its own tape and RNG stream; gradients are summed
//! in element order, so results do not depend on thread count.

mod loss;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::backbone::{Backbone, Group, ModelError, ModelParams, ParamId};
use crate::contflow::FlowError;
use crate::editflow::EditError;
use crate::ndcore::{Tape, TensorError};
use crate::rng::{derive2, stream};
use crate::schedules::{sample_times, ScheduleSpec, TimePair};
use crate::synthdata::{make_vqa_pair, JointSample, Vocab};

pub use loss::{joint_loss, teacher_target, zip_loss_tape, LossInput, LossOpts, LossVars};
pub use optim::{clip_global, ema_update, global_norm, AdamW, GroupHyper, OptimConfig};

type GradMap = BTreeMap<ParamId, Vec<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{0}")]
    Config(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. }
                | TrainError::Tensor(TensorError::NonFinite { .. })
                | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
        )
    }
}

/// Regression target of the image part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMode {
    /// Plain flow matching onto `x1 − x0`.
    None,
    /// Frozen base on the same corrupted text and text time.
    SameNoise,
    /// Frozen base on the clean caption at text time 1.
    CleanText,
}

impl fmt::Display for TeacherMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TeacherMode::None => "none",
            TeacherMode::SameNoise => "same_noise",
            TeacherMode::CleanText => "clean_text",
        })
    }
}

impl FromStr for TeacherMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" | "fm" => Ok(TeacherMode::None),
            "same_noise" | "sn" => Ok(TeacherMode::SameNoise),
            "clean_text" | "ct" => Ok(TeacherMode::CleanText),
            _ => Err(format!("unknown teacher mode {s:?}")),
        }
    }
}

/// EMA-tracked text-loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceState {
    pub lambda_txt: f64,
    pub beta: f64,
    pub eps: f64,
    pub ratio_scale: f64,
    pub estimate_every: u64,
    pub probe_batch: usize,
}

impl Default for BalanceState {
    fn default() -> Self {
        Self {
            lambda_txt: 0.05,
            beta: 0.99,
            eps: 1e-8,
            ratio_scale: 5.0,
            estimate_every: 100,
            probe_batch: 3,
        }
    }
}

/// Scaled gradient ratio `ratio_scale·g_img/(g_txt + eps)`.
pub fn balance_ratio(state: &BalanceState, g_img: f64, g_txt: f64) -> f64 {
    state.ratio_scale * g_img / (g_txt + state.eps)
}

/// `λ ← β·λ + (1 − β)·r`, evaluated as `λ + (1 − β)(r − λ)` so that
/// `r = λ` is a fixed point in floating point too.
pub fn balance_update(state: BalanceState, g_img: f64, g_txt: f64) -> BalanceState {
    let r = balance_ratio(&state, g_img, g_txt);
    BalanceState {
        lambda_txt: state.lambda_txt + (1.0 - state.beta) * (r - state.lambda_txt),
        ..state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Base,
    Uplift,
    Vqa,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::Uplift => "uplift",
            Phase::Vqa => "vqa",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Phase::Base => 1,
            Phase::Uplift => 2,
            Phase::Vqa => 3,
        }
    }

    /// Groups updated in this phase.
    pub fn groups(self) -> &'static [Group] {
        match self {
            Phase::Base => &[Group::Base],
            Phase::Uplift | Phase::Vqa => &[Group::Adapter, Group::Head],
        }
    }

    pub fn lora_enabled(self) -> bool {
        self != Phase::Base
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "base" => Ok(Phase::Base),
            "uplift" => Ok(Phase::Uplift),
            "vqa" => Ok(Phase::Vqa),
            _ => Err(format!("unknown phase {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub teacher: TeacherMode,
    pub balance: BalanceState,
    /// When false, λ_txt stays at its initial value.
    pub balance_enabled: bool,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            seed: 0,
            schedule: ScheduleSpec::switched(0),
            teacher: TeacherMode::SameNoise,
            balance: BalanceState::default(),
            balance_enabled: true,
            optim: OptimConfig::default(),
        }
    }
}

/// Everything a phase carries from one step to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub phase: Phase,
    /// Completed optimizer steps in this phase.
    pub step: u64,
    pub opt: AdamW,
    pub ema: ModelParams,
    pub balance: BalanceState,
}

impl TrainState {
    pub fn new(phase: Phase, params: &ModelParams, balance: BalanceState) -> Self {
        Self {
            phase,
            step: 0,
            opt: AdamW::new(),
            ema: params.clone(),
            balance,
        }
    }
}

/// Gradient norms of the two loss parts on the probe micro-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub g_img: f64,
    pub g_txt: f64,
    /// Scaled ratio before the EMA.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub phase: Phase,
    pub step: u64,
    pub loss: f64,
    pub image: f64,
    pub text: f64,
    pub lambda_txt: f64,
    pub grad_norm: f64,
    pub probe: Option<Probe>,
}

pub const METRICS_HEADER: &str = "phase,step,loss,image,text,lambda_txt,grad_norm,g_img,g_txt,raw_ratio";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let (a, b, c) = match self.probe {
            Some(p) => (p.g_img.to_string(), p.g_txt.to_string(), p.ratio.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{a},{b},{c}",
            self.phase.as_str(),
            self.step,
            self.loss,
            self.image,
            self.text,
            self.lambda_txt,
            self.grad_norm
        )
    }
}

struct ElementOut {
    total: f64,
    image: f64,
    text: f64,
    grads: Vec<(ParamId, Vec<f64>)>,
}

/// Drives one phase over a fixed sample pool.
pub struct Trainer<'a> {
    pub bb: &'a Backbone,
    pub cfg: TrainConfig,
    pub data: &'a [JointSample],
    /// Needed for the question prompts of the `Vqa` phase.
    pub vocab: Option<&'a Vocab>,
}

fn non_finite(step: u64, e: TrainError) -> TrainError {
    if e.is_numerical() {
        TrainError::NonFinite {
            step,
            detail: e.to_string(),
        }
    } else {
        e
    }
}

impl<'a> Trainer<'a> {
    pub fn trainable_mask(&self, params: &ModelParams, phase: Phase) -> Vec<bool> {
        params.mask(phase.groups())
    }

    fn loss_opts(&self, state: &TrainState) -> LossOpts {
        match state.phase {
            Phase::Base => LossOpts {
                lambda_txt: 0.0,
                teacher: TeacherMode::None,
                lora_enabled: false,
            },
            Phase::Uplift => LossOpts {
                lambda_txt: state.balance.lambda_txt,
                teacher: self.cfg.teacher,
                lora_enabled: true,
            },
            Phase::Vqa => LossOpts {
                lambda_txt: 1.0,
                teacher: TeacherMode::None,
                lora_enabled: true,
            },
        }
    }

    fn times<R: Rng>(&self, phase: Phase, step: u64, probe: bool, rng: &mut R) -> TimePair {
        match phase {
            // Probe elements see jointly corrupted pairs so that neither loss
            // part is identically clean.
            Phase::Uplift if probe => sample_times(&ScheduleSpec::independent(), step, rng),
            Phase::Base => TimePair {
                t: rng.random(),
                tau: 1.0,
            },
            Phase::Uplift => sample_times(&self.cfg.schedule, step, rng),
            Phase::Vqa => TimePair {
                t: 1.0,
                tau: rng.random(),
            },
        }
    }

    /// Records one element's loss on `tape` using its own RNG stream.
    #[allow(clippy::too_many_arguments)]
    fn element_loss(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        mask: &[bool],
        state: &TrainState,
        opts: &LossOpts,
        stream_seed: u64,
        index: usize,
        probe: bool,
    ) -> Result<LossVars, TrainError> {
        let mut rng = stream(stream_seed, index as u64);
        let sample = &self.data[rng.random_range(0..self.data.len())];
        let times = self.times(state.phase, state.step, probe, &mut rng);
        match state.phase {
            Phase::Vqa => {
                let vocab = self
                    .vocab
                    .ok_or_else(|| TrainError::Config("vqa phase needs the vocabulary".into()))?;
                let pair = make_vqa_pair(vocab, sample, &mut rng);
                let answered = pair.answered();
                let input = LossInput::Span {
                    x: &sample.x,
                    answered: &answered,
                    prefix: pair.prompt.len() - 1,
                };
                joint_loss(tape, self.bb, params, mask, &input, times, opts, &mut rng)
            }
            _ => {
                let input = LossInput::Joint {
                    x: &sample.x,
                    y: &sample.y,
                };
                joint_loss(tape, self.bb, params, mask, &input, times, opts, &mut rng)
            }
        }
    }

    fn run_element(
        &self,
        params: &ModelParams,
        mask: &[bool],
        state: &TrainState,
        opts: &LossOpts,
        stream_seed: u64,
        index: usize,
    ) -> Result<ElementOut, TrainError> {
        let mut tape = Tape::new();
        let lv = self.element_loss(&mut tape, params, mask, state, opts, stream_seed, index, false)?;
        let g = tape.backward(lv.total)?;
        let mut grads: Vec<(ParamId, Vec<f64>)> = g
            .into_params()
            .into_iter()
            .map(|(id, t)| (id, t.into_values()))
            .collect();
        grads.sort_by_key(|(id, _)| *id);
        Ok(ElementOut {
            total: tape.value(lv.total).item(),
            image: tape.value(lv.image).item(),
            text: tape.value(lv.text).item(),
            grads,
        })
    }

    /// Mean gradient norms of the image and text parts over the shared
    /// (adapter) parameters, on a probe micro-batch with its own streams.
    pub fn probe(&self, params: &ModelParams, state: &TrainState) -> Result<Probe, TrainError> {
        let mask = params.mask(&[Group::Adapter]);
        let opts = LossOpts {
            lambda_txt: 1.0,
            ..self.loss_opts(state)
        };
        let seed = derive2(self.cfg.seed, 0x7072_6f62 + state.phase.tag(), state.step);
        let n = state.balance.probe_batch.max(1);
        let parts: Vec<Result<[GradMap; 2], TrainError>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut tape = Tape::new();
                let lv = self.element_loss(&mut tape, params, &mask, state, &opts, seed, i, true)?;
                let mut out = [BTreeMap::new(), BTreeMap::new()];
                for (k, var) in [lv.image, lv.text].into_iter().enumerate() {
                    if tape.requires_grad(var) {
                        for (id, t) in tape.backward(var)?.into_params() {
                            out[k].insert(id, t.into_values());
                        }
                    }
                }
                Ok(out)
            })
            .collect();
        let mut sums = [BTreeMap::new(), BTreeMap::new()];
        for p in parts {
            for (k, m) in p?.into_iter().enumerate() {
                accumulate(&mut sums[k], m.into_iter(), 1.0 / n as f64);
            }
        }
        let g_img = global_norm(&sums[0]);
        let g_txt = global_norm(&sums[1]);
        Ok(Probe {
            g_img,
            g_txt,
            ratio: balance_ratio(&state.balance, g_img, g_txt),
        })
    }

    /// One optimizer step: batch loss, ordered gradient sum, global clip,
    /// AdamW, EMA, and the periodic balance update.
    pub fn step(&self, params: &mut ModelParams, state: &mut TrainState) -> Result<StepMetrics, TrainError> {
        let step = state.step;
        self.step_inner(params, state).map_err(|e| non_finite(step, e))
    }

    fn step_inner(&self, params: &mut ModelParams, state: &mut TrainState) -> Result<StepMetrics, TrainError> {
        if self.data.is_empty() || self.cfg.batch == 0 {
            return Err(TrainError::Config("empty data or batch".into()));
        }
        let phase = state.phase;
        let mask = self.trainable_mask(params, phase);
        let opts = self.loss_opts(state);
        let seed = derive2(self.cfg.seed, phase.tag(), state.step);

        let probe = if phase == Phase::Uplift
            && self.cfg.balance_enabled
            && state.step.is_multiple_of(state.balance.estimate_every.max(1))
        {
            Some(self.probe(params, state)?)
        } else {
            None
        };

        let b = self.cfg.batch;
        let outs: Vec<Result<ElementOut, TrainError>> = (0..b)
            .into_par_iter()
            .map(|i| self.run_element(params, &mask, state, &opts, seed, i))
            .collect();
        let mut grads = BTreeMap::new();
        let (mut loss, mut image, mut text) = (0.0, 0.0, 0.0);
        let inv = 1.0 / b as f64;
        for o in outs {
            let o = o?;
            loss += o.total * inv;
            image += o.image * inv;
            text += o.text * inv;
            accumulate(&mut grads, o.grads.into_iter(), inv);
        }
        if grads.values().flatten().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite {
                step: state.step,
                detail: "gradient".into(),
            });
        }
        let grad_norm = clip_global(&mut grads, self.cfg.optim.clip_norm);
        let lr_scale = self.cfg.optim.warmup(state.step);
        state.opt.update(params, &grads, &self.cfg.optim, lr_scale);
        let ids: Vec<ParamId> = params.ids().filter(|&i| mask[i]).collect();
        ema_update(&mut state.ema, params, &ids, self.cfg.optim.ema_decay);

        if let Some(p) = probe {
            state.balance = balance_update(state.balance, p.g_img, p.g_txt);
            let l = state.balance.lambda_txt;
            if !(l > 0.0 && l.is_finite()) {
                return Err(TrainError::NonFinite {
                    step: state.step,
                    detail: format!("lambda_txt = {l}"),
                });
            }
        }
        let metrics = StepMetrics {
            phase,
            step: state.step,
            loss,
            image,
            text,
            lambda_txt: opts.lambda_txt,
            grad_norm,
            probe,
        };
        state.step += 1;
        Ok(metrics)
    }

    /// Runs `steps` optimizer steps, handing each metrics row to `sink`.
    pub fn run(
        &self,
        params: &mut ModelParams,
        state: &mut TrainState,
        steps: u64,
        mut sink: impl FnMut(&StepMetrics),
    ) -> Result<(), TrainError> {
        for _ in 0..steps {
            let m = self.step(params, state)?;
            sink(&m);
        }
        Ok(())
    }
}

fn accumulate(
    into: &mut BTreeMap<ParamId, Vec<f64>>,
    grads: impl Iterator<Item = (ParamId, Vec<f64>)>,
    weight: f64,
) {
    for (id, g) in grads {
        let slot = into.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += weight * v;
        }
    }
}
