//! Plain-Rust bodies of the exported functions, testable off the browser.

use std::collections::HashMap;

use dualflow::analysis::{ratio_surface, verify_theorem_ce, verify_theorem_mse};
use dualflow::editflow::{corrupt, corruption_pmf, SeqSpec, TokenSequence};
use dualflow::rng::stream;
use dualflow::schedules::trajectory_tau;
use dualflow::synthdata::{AttributeSpec, Dataset};

/// Upper limits that keep a single call interactive.
pub const MAX_SAMPLES: usize = 200_000;
pub const MAX_GRID: usize = 201;
pub const MAX_LEN: usize = 12;

fn check(ok: bool, msg: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

/// `τ(t; p)` on `points` evenly spaced t in [0, 1], one row per p.
pub fn tau_curves(ps: &[f64], points: usize) -> Result<Vec<f64>, String> {
    check((2..=10_000).contains(&points), "points must be in 2..=10000")?;
    check(ps.iter().all(|p| p.is_finite()), "p must be finite")?;
    let mut out = Vec::with_capacity(ps.len() * points);
    for &p in ps {
        for i in 0..points {
            out.push(trajectory_tau(i as f64 / (points - 1) as f64, p));
        }
    }
    Ok(out)
}

/// Row-major `steps × steps` log₁₀ ratios (rows: image agreement, columns:
/// text confidence) against the lower or upper text bound. Undefined cells are
/// NaN, unbounded ones ±∞.
pub fn surface(n: usize, steps: usize, upper: bool) -> Result<Vec<f64>, String> {
    check(n >= 2, "n must be at least 2")?;
    check((2..=MAX_GRID).contains(&steps), "steps out of range")?;
    let grid: Vec<f64> = (0..steps).map(|i| i as f64 / (steps - 1) as f64).collect();
    Ok(ratio_surface(n, &grid)
        .iter()
        .map(|c| {
            let v = if upper { c.log_ratio_upper } else { c.log_ratio_lower };
            match v {
                Some(v) => v,
                None if c.sigma_img == 1.0 && c.sigma_txt == 1.0 => f64::NAN,
                None if c.sigma_img == 1.0 => f64::NEG_INFINITY,
                None => f64::INFINITY,
            }
        })
        .collect())
}

pub fn captions() -> Vec<String> {
    let ds = Dataset::new(AttributeSpec::default()).expect("default attributes");
    ds.vocab.all_captions().iter().map(|(_, y)| ds.vocab.detokenize(y)).collect()
}

/// One corruption of caption `index` at `tau`: the caption with deleted words
/// in brackets, and the retained text on its own.
pub fn corrupt_caption(index: usize, tau: f64, seed: u64) -> Result<(String, String), String> {
    check((0.0..=1.0).contains(&tau), "tau must lie in [0, 1]")?;
    let ds = Dataset::new(AttributeSpec::default()).expect("default attributes");
    let caps = ds.vocab.all_captions();
    check(index < caps.len(), "caption index out of range")?;
    let c = corrupt(&caps[index].1, tau, &mut stream(seed, index as u64));
    let mut marked = Vec::new();
    for (i, &tok) in c.retained.body().iter().enumerate() {
        marked.extend(c.gaps[i].iter().map(|&d| format!("[{}]", ds.vocab.word(d))));
        marked.push(ds.vocab.word(tok).to_string());
    }
    marked.extend(c.gaps[c.retained.body().len()].iter().map(|&d| format!("[{}]", ds.vocab.word(d))));
    Ok((marked.join(" "), ds.vocab.detokenize(&c.retained)))
}

/// Retained-length histogram of `draws` corruptions of a length-`len`
/// sequence, followed by the exact law from enumeration (2·(len+1) values).
pub fn retained_lengths(len: usize, tau: f64, draws: usize, seed: u64) -> Result<Vec<f64>, String> {
    check(len <= MAX_LEN, "len too large to enumerate")?;
    check((0.0..=1.0).contains(&tau), "tau must lie in [0, 1]")?;
    check((1..=MAX_SAMPLES).contains(&draws), "draws out of range")?;
    let spec = SeqSpec {
        vocab_size: len + 2,
        eos: len + 1,
        max_len: len + 1,
    };
    let mut toks: Vec<usize> = (0..len).collect();
    toks.push(spec.eos);
    let y = TokenSequence::new(toks, &spec).map_err(|e| e.to_string())?;
    let mut rng = stream(seed, len as u64);
    let mut out = vec![0.0; 2 * (len + 1)];
    for _ in 0..draws {
        out[corrupt(&y, tau, &mut rng).retained.body().len()] += 1.0 / draws as f64;
    }
    let pmf: HashMap<TokenSequence, f64> = corruption_pmf(&y, tau, &spec).map_err(|e| e.to_string())?;
    for (seq, p) in pmf {
        out[len + 1 + seq.body().len()] += p;
    }
    Ok(out)
}

/// `[empirical, closed form]` for the MSE gradient norm.
pub fn mse_check(n: usize, sigma: f64, samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    check((2..=4096).contains(&n), "n must be in 2..=4096")?;
    check((0.0..=1.0).contains(&sigma), "sigma must lie in [0, 1]")?;
    check((1..=MAX_SAMPLES).contains(&samples), "samples out of range")?;
    let r = verify_theorem_mse(n, sigma, samples, seed);
    Ok(vec![r.empirical, r.lower])
}

/// `[mean P_Y, empirical, lower, upper]` for the CE gradient norm.
pub fn ce_check(n: usize, mu: f64, samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    check((2..=4096).contains(&n), "n must be in 2..=4096")?;
    check(mu.is_finite(), "mu must be finite")?;
    check((1..=MAX_SAMPLES).contains(&samples), "samples out of range")?;
    let r = verify_theorem_ce(n, mu, samples, seed);
    Ok(vec![r.sigma, r.empirical, r.lower, r.upper])
}
