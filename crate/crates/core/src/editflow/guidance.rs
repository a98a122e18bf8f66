use super::{EditError, InsertionPrediction};

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Guided insertion parameters from a conditional and an unconditional pass.
///
/// Rates mix geometrically (`log λ = log λ_u + γ (log λ_c − log λ_u)`), gates
/// the same way in logit space, and token distributions as
/// `w_u^{1−γ} · w_c^{γ}` renormalized. Tokens without mass in a distribution
/// that carries a nonzero exponent stay at zero.
pub fn cfg_combine(
    cond: &InsertionPrediction,
    uncond: &InsertionPrediction,
    gamma: f64,
) -> Result<InsertionPrediction, EditError> {
    if !(gamma >= 0.0) {
        return Err(EditError::Guidance(gamma));
    }
    if cond.len() != uncond.len() {
        return Err(EditError::Misaligned {
            got: uncond.len(),
            want: cond.len(),
        });
    }
    for &r in cond.rate.iter().chain(&uncond.rate) {
        if !(r > 0.0) {
            return Err(EditError::Rate(r));
        }
    }
    if gamma == 1.0 {
        return Ok(cond.clone());
    }
    if gamma == 0.0 {
        return Ok(uncond.clone());
    }

    let mut out = InsertionPrediction {
        gate: Vec::with_capacity(cond.len()),
        rate: Vec::with_capacity(cond.len()),
        token_dist: Vec::with_capacity(cond.len()),
    };
    for i in 0..cond.len() {
        let (lu, lc) = (uncond.rate[i].ln(), cond.rate[i].ln());
        out.rate.push((lu + gamma * (lc - lu)).exp());
        let (gu, gc) = (logit(uncond.gate[i]), logit(cond.gate[i]));
        out.gate.push(sigmoid(gu + gamma * (gc - gu)));

        let (wu, wc) = (&uncond.token_dist[i], &cond.token_dist[i]);
        if wu.len() != wc.len() {
            return Err(EditError::Distribution("vocabulary size differs".into()));
        }
        let logs: Vec<Option<f64>> = wu
            .iter()
            .zip(wc)
            .map(|(&pu, &pc)| {
                let term = |p: f64, e: f64| -> Option<f64> {
                    if e == 0.0 {
                        Some(0.0)
                    } else if p > 0.0 {
                        Some(e * p.ln())
                    } else {
                        None
                    }
                };
                Some(term(pu, 1.0 - gamma)? + term(pc, gamma)?)
            })
            .collect();
        let m = logs
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(EditError::Renormalize(i));
        }
        let unnorm: Vec<f64> = logs.iter().map(|l| l.map_or(0.0, |v| (v - m).exp())).collect();
        let z: f64 = unnorm.iter().sum();
        out.token_dist.push(unnorm.into_iter().map(|v| v / z).collect());
    }
    Ok(out)
}
