//! Generation as trajectories through the (t, τ) square.
//!
//! Every mode walks a grid of time pairs and calls the same forward pass:
//! text→vector pins τ = 1 and integrates the velocity; vector→text pins
//! t = 1 and runs reverse insertion steps; joint mode moves both clocks
//! with τ = t^(2^p); partial text is vector→text restricted to a span.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::backbone::{Backbone, ModelError, ModelParams};
use crate::contflow::{cfg_velocity, euler_step, FlowError};
use crate::editflow::{cfg_combine, reverse_step, DecodeOpts, EditError, InsertionPrediction, SpanMask, TokenSequence};
use crate::rng::stream;
use crate::schedules::{trajectory_tau, TimePair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("trajectory left the unit square or went backwards at {0:?}")]
    Trajectory(TimePair),
    #[error("invalid generation spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenMode {
    T2i,
    I2t,
    Joint,
    PartialText,
}

impl GenMode {
    /// RNG stream index of the mode's noise draws.
    pub fn tag(self) -> u64 {
        match self {
            GenMode::T2i => 1,
            GenMode::I2t => 2,
            GenMode::Joint => 3,
            GenMode::PartialText => 4,
        }
    }
}

impl fmt::Display for GenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenMode::T2i => "t2i",
            GenMode::I2t => "i2t",
            GenMode::Joint => "joint",
            GenMode::PartialText => "partial_text",
        })
    }
}

impl FromStr for GenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "t2i" => Ok(GenMode::T2i),
            "i2t" => Ok(GenMode::I2t),
            "joint" => Ok(GenMode::Joint),
            "partial_text" => Ok(GenMode::PartialText),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub mode: GenMode,
    pub steps: usize,
    /// Trajectory exponent of joint mode.
    pub p: f64,
    pub gamma_img: f64,
    pub gamma_txt: f64,
    pub decode: DecodeOpts,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            mode: GenMode::Joint,
            steps: 28,
            p: 0.0,
            gamma_img: 1.0,
            gamma_txt: 1.0,
            decode: DecodeOpts::default(),
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.steps == 0 {
            return Err(GenError::Spec("steps must be at least 1".into()));
        }
        if !(self.gamma_img >= 0.0 && self.gamma_txt >= 0.0) {
            return Err(GenError::Spec("guidance scales must be nonnegative".into()));
        }
        if !self.p.is_finite() {
            return Err(GenError::Spec("p must be finite".into()));
        }
        Ok(())
    }
}

/// Record of the time pairs a generation visited and the updates it made.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub visited: Vec<TimePair>,
    pub euler_updates: usize,
    pub reverse_steps: usize,
    /// Some insertion hit `max_len` and was cut.
    pub truncated: bool,
}

impl Trace {
    /// Every visited pair lies in the unit square and neither clock runs
    /// backwards.
    fn visit(&mut self, tp: TimePair) -> Result<(), GenError> {
        let inside = (0.0..=1.0).contains(&tp.t) && (0.0..=1.0).contains(&tp.tau);
        let forward = self
            .visited
            .last()
            .is_none_or(|prev| tp.t >= prev.t && tp.tau >= prev.tau);
        if !(inside && forward) {
            return Err(GenError::Trajectory(tp));
        }
        self.visited.push(tp);
        Ok(())
    }
}

/// A generated pair with its trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub x: Vec<f64>,
    pub y: TokenSequence,
    pub trace: Trace,
}

/// Read-only view of a model for sampling.
#[derive(Debug, Clone, Copy)]
pub struct Generator<'a> {
    pub bb: &'a Backbone,
    pub params: &'a ModelParams,
    pub lora_enabled: bool,
}

fn gaussian<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn grid(k: usize, steps: usize) -> f64 {
    k as f64 / steps as f64
}

impl<'a> Generator<'a> {
    pub fn new(bb: &'a Backbone, params: &'a ModelParams) -> Self {
        Self {
            bb,
            params,
            lora_enabled: true,
        }
    }

    fn predict(
        &self,
        x: &[f64],
        t: f64,
        y: &TokenSequence,
        tau: f64,
    ) -> Result<(Vec<f64>, InsertionPrediction), GenError> {
        Ok(self.bb.predict(self.params, x, t, y, tau, self.lora_enabled)?)
    }

    fn empty(&self) -> TokenSequence {
        TokenSequence::empty(&self.bb.config().seq_spec())
    }

    /// Guided velocity toward the fully uninformative text context (ε, τ = 0).
    fn guided_velocity(&self, v_cond: Vec<f64>, x: &[f64], t: f64, gamma: f64) -> Result<Vec<f64>, GenError> {
        if gamma == 1.0 {
            return Ok(v_cond);
        }
        let (v_u, _) = self.predict(x, t, &self.empty(), 0.0)?;
        Ok(cfg_velocity(&v_cond, &v_u, gamma)?)
    }

    /// Guided insertion prediction against the uninformative vector context
    /// (`x_u`, t = 0).
    fn guided_text(
        &self,
        cond: InsertionPrediction,
        x_u: &[f64],
        y: &TokenSequence,
        tau: f64,
        gamma: f64,
    ) -> Result<InsertionPrediction, GenError> {
        if gamma == 1.0 {
            return Ok(cond);
        }
        let (_, uncond) = self.predict(x_u, 0.0, y, tau)?;
        Ok(cfg_combine(&cond, &uncond, gamma)?)
    }

    pub fn text_to_vector(&self, y: &TokenSequence, spec: &GenSpec) -> Result<Generated, GenError> {
        spec.validate()?;
        let mut rng = stream(spec.seed, GenMode::T2i.tag());
        let mut x = gaussian(self.bb.config().d, &mut rng);
        let mut trace = Trace::default();
        let dt = 1.0 / spec.steps as f64;
        for k in 0..spec.steps {
            let t = grid(k, spec.steps);
            trace.visit(TimePair { t, tau: 1.0 })?;
            let (v, _) = self.predict(&x, t, y, 1.0)?;
            let v = self.guided_velocity(v, &x, t, spec.gamma_img)?;
            euler_step(&mut x, &v, dt)?;
            trace.euler_updates += 1;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::Divergence { step: k, t }.into());
            }
        }
        trace.visit(TimePair { t: 1.0, tau: 1.0 })?;
        Ok(Generated {
            x,
            y: y.clone(),
            trace,
        })
    }

    pub fn vector_to_text(&self, x: &[f64], spec: &GenSpec) -> Result<Generated, GenError> {
        self.insert_text(x, self.empty(), None, spec, GenMode::I2t)
    }

    /// Fills the gaps allowed by `span`; everything outside stays fixed.
    pub fn partial_text(
        &self,
        x: &[f64],
        prompt: &TokenSequence,
        span: &SpanMask,
        spec: &GenSpec,
    ) -> Result<Generated, GenError> {
        self.insert_text(x, prompt.clone(), Some(span), spec, GenMode::PartialText)
    }

    fn insert_text(
        &self,
        x: &[f64],
        start: TokenSequence,
        span: Option<&SpanMask>,
        spec: &GenSpec,
        mode: GenMode,
    ) -> Result<Generated, GenError> {
        spec.validate()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GenError::Spec("vector must be finite".into()));
        }
        let seq_spec = self.bb.config().seq_spec();
        let mut rng = stream(spec.seed, mode.tag());
        let x_u = gaussian(self.bb.config().d, &mut rng);
        let mut y = start;
        let mut trace = Trace::default();
        for k in 0..spec.steps {
            let tau = grid(k, spec.steps);
            let dtau = grid(k + 1, spec.steps) - tau;
            trace.visit(TimePair { t: 1.0, tau })?;
            let (_, pred) = self.predict(x, 1.0, &y, tau)?;
            let pred = self.guided_text(pred, &x_u, &y, tau, spec.gamma_txt)?;
            let out = reverse_step(&y, &pred, tau, dtau, &spec.decode, span, &seq_spec, &mut rng)?;
            trace.reverse_steps += 1;
            trace.truncated |= out.truncated;
            y = out.seq;
        }
        trace.visit(TimePair { t: 1.0, tau: 1.0 })?;
        Ok(Generated {
            x: x.to_vec(),
            y,
            trace,
        })
    }

    /// Both modalities from noise: `t_k = k/steps`, `τ_k = t_k^(2^p)`, one
    /// forward pass per step feeding both updates.
    pub fn joint_generate(&self, spec: &GenSpec) -> Result<Generated, GenError> {
        spec.validate()?;
        let seq_spec = self.bb.config().seq_spec();
        let d = self.bb.config().d;
        let mut rng = stream(spec.seed, GenMode::Joint.tag());
        let mut x = gaussian(d, &mut rng);
        let x_u = gaussian(d, &mut rng);
        let mut y = self.empty();
        let mut trace = Trace::default();
        let dt = 1.0 / spec.steps as f64;
        for k in 0..spec.steps {
            let t = grid(k, spec.steps);
            let tau = trajectory_tau(t, spec.p);
            let tau_next = trajectory_tau(grid(k + 1, spec.steps), spec.p);
            trace.visit(TimePair { t, tau })?;
            let (v, pred) = self.predict(&x, t, &y, tau)?;
            let v = self.guided_velocity(v, &x, t, spec.gamma_img)?;
            let pred = self.guided_text(pred, &x_u, &y, tau, spec.gamma_txt)?;
            euler_step(&mut x, &v, dt)?;
            trace.euler_updates += 1;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::Divergence { step: k, t }.into());
            }
            let out = reverse_step(&y, &pred, tau, tau_next - tau, &spec.decode, None, &seq_spec, &mut rng)?;
            trace.reverse_steps += 1;
            trace.truncated |= out.truncated;
            y = out.seq;
        }
        trace.visit(TimePair { t: 1.0, tau: 1.0 })?;
        Ok(Generated { x, y, trace })
    }
}

/// One line of a sample dump.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: usize,
    pub mode: GenMode,
    pub x: Vec<f64>,
    pub caption: String,
    pub consistent: bool,
}

/// `<id>\t<mode>\t<x,...>\t<caption>\t<0|1>` per record.
pub fn write_samples<W: Write>(mut w: W, records: &[SampleRecord]) -> std::io::Result<()> {
    for r in records {
        let xs: Vec<String> = r.x.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.id,
            r.mode,
            xs.join(","),
            r.caption,
            r.consistent as u8
        )?;
    }
    Ok(())
}
