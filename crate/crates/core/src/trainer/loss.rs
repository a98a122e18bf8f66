use rand::Rng;
use rand_distr::StandardNormal;

use super::{TeacherMode, TrainError};
use crate::backbone::{Backbone, ForwardVars, ModelParams};
use crate::contflow::{fm_loss_tape, interpolate, velocity_target};
use crate::editflow::{corrupt, SeqSpec, TokenSequence};
use crate::ndcore::{Tape, Tensor, TensorError, Var};
use crate::schedules::TimePair;

/// Zero-inflated insertion loss recorded on the tape, summed over the
/// positions selected by `positions` (all when `None`).
///
/// The gate term uses `softplus(∓z)` on the gate logit, which equals
/// `−log σ(z)` / `−log(1 − σ(z))` without saturating.
pub fn zip_loss_tape(
    tape: &mut Tape,
    fv: &ForwardVars,
    gaps: &[Vec<usize>],
    positions: Option<&[bool]>,
    spec: &SeqSpec,
) -> Result<Var, TensorError> {
    let n = gaps.len();
    let logits_shape = tape.value(fv.token_logits).shape().to_vec();
    if logits_shape[0] != n {
        return Err(TensorError::Dimension {
            op: "zip_loss_tape",
            detail: format!("{n} gaps, {} positions", logits_shape[0]),
        });
    }
    let n_ins = logits_shape[1];
    let used = |i: usize| positions.is_none_or(|p| p[i]);

    let signs: Vec<f64> = (0..n)
        .map(|i| match (used(i), gaps[i].is_empty()) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => -1.0,
        })
        .collect();
    let sv = tape.constant(Tensor::matrix(n, 1, signs.clone())?);
    let z = tape.mul(fv.gate_logit, sv)?;
    let bce = tape.softplus(z)?;
    // Unused positions contribute softplus(0) = ln 2; mask them out.
    let keep = tape.constant(Tensor::matrix(n, 1, signs.iter().map(|s| s.abs()).collect())?);
    let bce = tape.mul(bce, keep)?;
    let mut total = tape.sum(bce)?;

    let nonempty: Vec<usize> = (0..n).filter(|&i| used(i) && !gaps[i].is_empty()).collect();
    if !nonempty.is_empty() {
        let rates = tape.gather(fv.rate, &nonempty)?;
        let ks: Vec<f64> = nonempty.iter().map(|&i| gaps[i].len() as f64).collect();
        let kv = tape.constant(Tensor::vector(ks));
        let lr = tape.log(rates)?;
        let klr = tape.mul(lr, kv)?;
        let a = tape.sum(rates)?;
        let b = tape.sum(klr)?;
        let pois = tape.sub(a, b)?;
        total = tape.add(total, pois)?;

        let mut idx = Vec::new();
        for &i in &nonempty {
            for &tok in &gaps[i] {
                let j = spec.insertable_index(tok).ok_or(TensorError::Index {
                    op: "zip_loss_tape",
                    index: tok,
                    extent: n_ins,
                })?;
                idx.push(i * n_ins + j);
            }
        }
        let ls = tape.log_softmax(fv.token_logits)?;
        let picked = tape.gather(ls, &idx)?;
        let s = tape.sum(picked)?;
        total = tape.sub(total, s)?;
    }
    Ok(total)
}

/// Frozen-base velocity used as the regression target. It is computed off
/// the tape, so no gradient flows through it.
#[allow(clippy::too_many_arguments)]
pub fn teacher_target(
    bb: &Backbone,
    params: &ModelParams,
    x_t: &[f64],
    t: f64,
    y_clean: &TokenSequence,
    y_corrupted: &TokenSequence,
    tau: f64,
    mode: TeacherMode,
) -> Result<Vec<f64>, TrainError> {
    let v = match mode {
        TeacherMode::SameNoise => bb.velocity(params, x_t, t, y_corrupted, tau, false)?,
        TeacherMode::CleanText => bb.velocity(params, x_t, t, y_clean, 1.0, false)?,
        TeacherMode::None => {
            return Err(TrainError::Config("teacher_target needs a teacher mode".into()));
        }
    };
    Ok(v)
}

/// What one element of a batch trains on.
#[derive(Debug, Clone)]
pub enum LossInput<'a> {
    /// Joint image + text objective on a paired sample.
    Joint {
        x: &'a [f64],
        y: &'a TokenSequence,
    },
    /// Text-only objective on a question prompt whose answer (the tokens
    /// between `prefix` and EOS) is the only thing corrupted.
    Span {
        x: &'a [f64],
        answered: &'a TokenSequence,
        prefix: usize,
    },
}

/// Loss handles of one element.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub image: Var,
    pub text: Var,
}

/// Options shared by every element of a step.
#[derive(Debug, Clone, Copy)]
pub struct LossOpts {
    pub lambda_txt: f64,
    pub teacher: TeacherMode,
    pub lora_enabled: bool,
}

/// Corrupts both modalities at `times`, runs the model once and records
/// `image + λ_txt·text` on the tape.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    bb: &Backbone,
    params: &ModelParams,
    trainable: &[bool],
    input: &LossInput<'_>,
    times: TimePair,
    opts: &LossOpts,
    rng: &mut R,
) -> Result<LossVars, TrainError> {
    let spec = bb.config().seq_spec();
    match *input {
        LossInput::Joint { x, y } => {
            let x0: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let x_t = interpolate(&x0, x, times.t)?;
            let ct = corrupt(y, times.tau, rng);
            let corrupted = ct.retained.clone();
            let fv = bb.forward(tape, params, trainable, &x_t, times.t, &corrupted, times.tau, opts.lora_enabled)?;
            let target = match opts.teacher {
                TeacherMode::None => velocity_target(&x0, x)?,
                mode => teacher_target(bb, params, &x_t, times.t, y, &corrupted, times.tau, mode)?,
            };
            let image = fm_loss_tape(tape, fv.velocity, &target)?;
            let text = zip_loss_tape(tape, &fv, &ct.gaps, None, &spec)?;
            let weighted = tape.scale(text, opts.lambda_txt)?;
            let total = tape.add(image, weighted)?;
            Ok(LossVars { total, image, text })
        }
        LossInput::Span { x, answered, prefix } => {
            let toks = answered.tokens();
            let n = toks.len();
            let mut retained = toks[..prefix].to_vec();
            let mut gaps = vec![Vec::new(); prefix];
            let mut pending = Vec::new();
            for &tok in &toks[prefix..n - 1] {
                if rng.random::<f64>() < times.tau {
                    retained.push(tok);
                    gaps.push(std::mem::take(&mut pending));
                } else {
                    pending.push(tok);
                }
            }
            gaps.push(pending);
            retained.push(toks[n - 1]);
            let corrupted = TokenSequence::new(retained, &spec)?;
            let positions: Vec<bool> = (0..corrupted.len()).map(|i| i >= prefix).collect();
            let fv = bb.forward(tape, params, trainable, x, 1.0, &corrupted, times.tau, opts.lora_enabled)?;
            let text = zip_loss_tape(tape, &fv, &gaps, Some(&positions), &spec)?;
            let image = tape.constant(Tensor::scalar(0.0));
            let weighted = tape.scale(text, opts.lambda_txt)?;
            let total = tape.add(image, weighted)?;
            Ok(LossVars { total, image, text })
        }
    }
}
