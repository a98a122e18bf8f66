use rand::Rng;

use super::{EditError, InsertionPrediction, SeqSpec, TokenSequence};

/// How many tokens a position inserts in one reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountRule {
    /// Gate opens with probability `π`; count `k ~ Poisson(λ·g)`, zero-truncated
    /// on the final step.
    Sampled,
    /// Deterministic: `k = round(π·λ·g)`, the expected number of tokens the
    /// step should revive in the gap.
    Expected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOpts {
    pub temperature: f64,
    /// `0` disables the top-k filter.
    pub top_k: usize,
    pub counts: CountRule,
}

impl Default for DecodeOpts {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_k: 1,
            counts: CountRule::Expected,
        }
    }
}

/// Which gaps the reverse process may fill.
///
/// `Region` fixes the first `prefix` and last `suffix` tokens of the current
/// sequence; every gap between them is insertable. The region grows with
/// its own insertions, so the mask stays valid across steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanMask {
    Region { prefix: usize, suffix: usize },
    Empty,
}

impl SpanMask {
    /// Only the gap immediately left of EOS (and whatever grows there).
    pub fn before_eos(prompt_len: usize) -> Self {
        SpanMask::Region {
            prefix: prompt_len.saturating_sub(1),
            suffix: 1,
        }
    }

    /// Whether the gap left of position `pos` may receive insertions.
    pub fn allows(&self, pos: usize, len: usize) -> bool {
        match *self {
            SpanMask::Empty => false,
            SpanMask::Region { prefix, suffix } => pos >= prefix && pos + suffix <= len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub seq: TokenSequence,
    pub inserted: usize,
    /// Some insertions were dropped to respect `max_len`.
    pub truncated: bool,
}

/// Survival-time amplification `min(dτ / (1 − τ), 1)`.
pub fn time_change(tau: f64, dtau: f64) -> f64 {
    if tau >= 1.0 {
        1.0
    } else {
        (dtau / (1.0 - tau)).clamp(0.0, 1.0)
    }
}

/// Poisson draw by CDF inversion.
pub fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    invert_poisson(rate, u)
}

/// Poisson draw conditioned on being at least one.
pub fn sample_zero_truncated_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> usize {
    if rate <= 0.0 {
        return 1;
    }
    let p0 = (-rate).exp();
    let u: f64 = rng.random();
    invert_poisson(rate, p0 + u * (1.0 - p0)).max(1)
}

fn invert_poisson(rate: f64, u: f64) -> usize {
    let mut k = 0usize;
    let mut p = (-rate).exp();
    let mut cdf = p;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k
}

/// Draws one token id from the guided distribution `w` under `opts`.
pub fn decode_token<R: Rng + ?Sized>(w: &[f64], opts: &DecodeOpts, rng: &mut R) -> usize {
    let mut order: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    if opts.top_k == 1 || opts.temperature <= 0.0 {
        return order[0];
    }
    if opts.top_k > 0 {
        order.truncate(opts.top_k);
    }
    let inv_t = 1.0 / opts.temperature;
    let weights: Vec<f64> = order.iter().map(|&i| (w[i].ln() * inv_t).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * z;
    for (&i, &wt) in order.iter().zip(&weights) {
        if u < wt {
            return i;
        }
        u -= wt;
    }
    *order.last().expect("nonempty support")
}

/// One reverse-time step of the insertion process from `tau` to `tau + dtau`.
///
/// Positions are visited left to right. Existing tokens are never touched;
/// new tokens for position `i` go immediately left of it in the order they
/// were drawn.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step<R: Rng + ?Sized>(
    current: &TokenSequence,
    pred: &InsertionPrediction,
    tau: f64,
    dtau: f64,
    decode: &DecodeOpts,
    span: Option<&SpanMask>,
    spec: &SeqSpec,
    rng: &mut R,
) -> Result<StepOutcome, EditError> {
    pred.aligned_with(current)?;
    if !(0.0..=1.0).contains(&tau) || dtau < 0.0 || tau + dtau > 1.0 + 1e-12 {
        return Err(EditError::Time(tau + dtau));
    }
    let g = time_change(tau, dtau);
    let final_step = g >= 1.0;
    let len = current.len();
    let mut capacity = spec.max_len.saturating_sub(len);
    let mut truncated = false;
    let mut inserted = 0;
    let mut out = Vec::with_capacity(spec.max_len);

    for (i, &tok) in current.tokens().iter().enumerate() {
        let allowed = span.is_none_or(|s| s.allows(i, len));
        if allowed && g > 0.0 {
            let (pi, lam) = (pred.gate[i], pred.rate[i]);
            let k = match decode.counts {
                CountRule::Expected => (pi * lam * g + 0.5).floor() as usize,
                CountRule::Sampled => {
                    if rng.random::<f64>() >= pi {
                        0
                    } else if final_step {
                        sample_zero_truncated_poisson(lam, rng)
                    } else {
                        sample_poisson(lam * g, rng)
                    }
                }
            };
            let k_fit = k.min(capacity);
            truncated |= k_fit < k;
            for _ in 0..k_fit {
                out.push(decode_token(&pred.token_dist[i], decode, rng));
            }
            capacity -= k_fit;
            inserted += k_fit;
        }
        out.push(tok);
    }
    Ok(StepOutcome {
        seq: TokenSequence::new(out, spec)?,
        inserted,
        truncated,
    })
}
