use std::collections::HashMap;

use rand::Rng;

use super::{EditError, SeqSpec, TokenSequence};

/// A deletion-corrupted sequence with the deleted tokens grouped by the
/// retained position they sit immediately left of.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedText {
    pub retained: TokenSequence,
    /// `gaps[i]` holds the deleted tokens between retained `i−1` and `i`, in order.
    pub gaps: Vec<Vec<usize>>,
    pub tau: f64,
}

impl CorruptedText {
    /// Interleaves gaps and retained tokens back into the clean sequence.
    pub fn reconstruct(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (gap, &tok) in self.gaps.iter().zip(self.retained.tokens()) {
            out.extend_from_slice(gap);
            out.push(tok);
        }
        out
    }

    pub fn counts(&self) -> Vec<usize> {
        self.gaps.iter().map(Vec::len).collect()
    }
}

/// Keeps every non-EOS token independently with probability `tau`.
pub fn corrupt<R: Rng + ?Sized>(y: &TokenSequence, tau: f64, rng: &mut R) -> CorruptedText {
    let mut retained = Vec::with_capacity(y.len());
    let mut gaps = Vec::with_capacity(y.len());
    let mut pending = Vec::new();
    for &tok in y.body() {
        if rng.random::<f64>() < tau {
            retained.push(tok);
            gaps.push(std::mem::take(&mut pending));
        } else {
            pending.push(tok);
        }
    }
    retained.push(*y.tokens().last().expect("sequence has EOS"));
    gaps.push(pending);
    CorruptedText {
        retained: TokenSequence::from_raw(retained),
        gaps,
        tau,
    }
}

/// Gap lists of `clean` relative to `current`, using the leftmost embedding of
/// `current` as a subsequence. Returns `None` if `current` is not a
/// subsequence of `clean`.
pub fn align(current: &TokenSequence, clean: &TokenSequence) -> Option<Vec<Vec<usize>>> {
    let mut gaps = Vec::with_capacity(current.len());
    let mut j = 0;
    let target = clean.tokens();
    for &tok in current.tokens() {
        let mut gap = Vec::new();
        loop {
            let c = *target.get(j)?;
            j += 1;
            if c == tok {
                break;
            }
            gap.push(c);
        }
        gaps.push(gap);
    }
    (j == target.len()).then_some(gaps)
}

/// Exact law of `corrupt(y, tau)` by enumerating all retention masks,
/// aggregated by the resulting retained sequence.
pub fn corruption_pmf(
    y: &TokenSequence,
    tau: f64,
    spec: &SeqSpec,
) -> Result<HashMap<TokenSequence, f64>, EditError> {
    let body = y.body();
    let l = body.len();
    if l > 12 {
        return Err(EditError::Enumeration(l));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(EditError::Time(tau));
    }
    let mut pmf = HashMap::new();
    for mask in 0u32..(1 << l) {
        let kept = mask.count_ones() as i32;
        let p = tau.powi(kept) * (1.0 - tau).powi(l as i32 - kept);
        if p == 0.0 {
            continue;
        }
        let mut toks: Vec<usize> = (0..l).filter(|i| mask >> i & 1 == 1).map(|i| body[i]).collect();
        toks.push(spec.eos);
        *pmf.entry(TokenSequence::from_raw(toks)).or_insert(0.0) += p;
    }
    Ok(pmf)
}
