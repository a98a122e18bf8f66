use std::sync::atomic::{AtomicU64, Ordering};

use super::{EditError, InsertionPrediction};

/// Floor applied inside every log of a predicted probability.
pub const LOG_FLOOR: f64 = 1e-12;

static GUARD_HITS: AtomicU64 = AtomicU64::new(0);

/// How many times a gap token had (numerically) zero predicted mass.
pub fn token_loss_guard_hits() -> u64 {
    GUARD_HITS.load(Ordering::Relaxed)
}

fn guarded_ln(p: f64) -> f64 {
    if p < LOG_FLOOR {
        GUARD_HITS.fetch_add(1, Ordering::Relaxed);
        log::warn!("gap token has predicted mass {p:e}; clamped to {LOG_FLOOR:e}");
        LOG_FLOOR.ln()
    } else {
        p.ln()
    }
}

fn check_len(pred: &InsertionPrediction, n: usize) -> Result<(), EditError> {
    if pred.len() != n || pred.rate.len() != n || pred.token_dist.len() != n {
        return Err(EditError::Misaligned {
            got: pred.len(),
            want: n,
        });
    }
    Ok(())
}

fn poisson_term(rate: f64, k: usize) -> Result<f64, EditError> {
    if !(rate > 0.0) {
        return Err(EditError::Rate(rate));
    }
    Ok(rate - k as f64 * rate.ln())
}

/// Poisson negative log-likelihood of the gap sizes (constants dropped):
/// `Σ_i λ_i − |A_i| log λ_i`.
pub fn count_loss(pred: &InsertionPrediction, counts: &[usize]) -> Result<f64, EditError> {
    check_len(pred, counts.len())?;
    pred.rate
        .iter()
        .zip(counts)
        .map(|(&r, &k)| poisson_term(r, k))
        .sum()
}

/// Cross-entropy of the deleted token identities: `−Σ_i Σ_{a∈A_i} log w_i(a)`.
pub fn token_loss(pred: &InsertionPrediction, gaps: &[Vec<usize>]) -> Result<f64, EditError> {
    check_len(pred, gaps.len())?;
    let mut total = 0.0;
    for (w, gap) in pred.token_dist.iter().zip(gaps) {
        for &a in gap {
            let p = *w.get(a).ok_or(EditError::Token {
                token: a,
                vocab: w.len(),
            })?;
            total -= guarded_ln(p);
        }
    }
    Ok(total)
}

/// Zero-inflated variant: a gate BCE on "gap is nonempty" everywhere, with
/// the Poisson and token terms only on nonempty gaps.
pub fn zip_loss(pred: &InsertionPrediction, gaps: &[Vec<usize>]) -> Result<f64, EditError> {
    check_len(pred, gaps.len())?;
    let mut total = 0.0;
    for (i, gap) in gaps.iter().enumerate() {
        let pi = pred.gate[i];
        if !(0.0..=1.0).contains(&pi) {
            return Err(EditError::Gate(pi));
        }
        let k = gap.len();
        if k > 0 {
            total -= pi.max(LOG_FLOOR).ln();
            total += poisson_term(pred.rate[i], k)?;
        } else {
            total -= (1.0 - pi).max(LOG_FLOOR).ln();
        }
    }
    Ok(total + token_loss(pred, gaps)?)
}
