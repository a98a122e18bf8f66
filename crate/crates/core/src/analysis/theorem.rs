//! Monte Carlo checks of the gradient-norm results for the MSE and
//! cross-entropy heads, and the ratio surface built from them.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::rng::derive_seed;

const CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem {
    Mse,
    Ce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub theorem: Theorem,
    pub n: usize,
    /// Agreement level. For the CE check this is the sample mean of `P_Y`.
    pub sigma: f64,
    pub samples: usize,
    pub empirical: f64,
    /// Closed form (MSE) or lower bound (CE).
    pub lower: f64,
    /// Closed form (MSE) or upper bound (CE).
    pub upper: f64,
}

impl TheoremReport {
    /// `|empirical − analytic| / max(analytic, 1e-12)`, MSE only.
    pub fn rel_err(&self) -> Option<f64> {
        (self.theorem == Theorem::Mse).then(|| (self.empirical - self.lower).abs() / self.lower.max(1e-12))
    }

    /// Whether `lower ≤ empirical ≤ upper`, CE only. No tolerance.
    pub fn bound_satisfied(&self) -> Option<bool> {
        (self.theorem == Theorem::Ce).then_some(self.lower <= self.empirical && self.empirical <= self.upper)
    }

    /// Pass/fail under `tol` relative error (MSE, or exact zero when the
    /// analytic value is zero) or the hard bounds (CE).
    pub fn passes(&self, tol: f64) -> bool {
        match self.theorem {
            Theorem::Mse if self.lower == 0.0 => self.empirical.abs() <= 1e-12,
            Theorem::Mse => self.rel_err().is_some_and(|e| e < tol),
            Theorem::Ce => self.bound_satisfied() == Some(true),
        }
    }
}

/// Splits `samples` into fixed chunks, each with its own stream, and sums
/// the per-chunk totals in chunk order. The Monte Carlo draws dominate the
/// cost, so chunks use xoshiro rather than the ChaCha streams.
fn chunked_mean<F>(samples: usize, seed: u64, f: F) -> f64
where
    F: Fn(&mut Xoshiro256PlusPlus, usize) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(samples - c * CHUNK);
            f(&mut Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, c as u64)), count)
        })
        .collect();
    parts.iter().sum::<f64>() / samples as f64
}

/// Expected squared norm of the MSE gradient `(2/n)(X − Y)` where
/// `Y = σX + √(1−σ²)Z`, against the closed form `8(1 − σ)/n`.
pub fn verify_theorem_mse(n: usize, sigma: f64, samples: usize, seed: u64) -> TheoremReport {
    assert!(n >= 2 && (0.0..=1.0).contains(&sigma) && samples > 0);
    let c = (1.0 - sigma * sigma).sqrt();
    let scale = 2.0 / n as f64;
    let empirical = chunked_mean(samples, seed, |rng, count| {
        let mut total = 0.0;
        for _ in 0..count {
            let mut s = 0.0;
            for _ in 0..n {
                let x: f64 = rng.sample(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                let g = scale * (x - (sigma * x + c * z));
                s += g * g;
            }
            total += s;
        }
        total
    });
    let analytic = 8.0 * (1.0 - sigma) / n as f64;
    TheoremReport {
        theorem: Theorem::Mse,
        n,
        sigma,
        samples,
        empirical,
        lower: analytic,
        upper: analytic,
    }
}

/// Lower and upper bounds `n/(n−1)·(1−σ)²` and `2(1−σ)`.
pub fn ce_bounds(n: usize, sigma: f64) -> (f64, f64) {
    let nf = n as f64;
    let d = 1.0 - sigma;
    (nf * (d * d) / (nf - 1.0), 2.0 * d)
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// `(P_Y, ‖P − e_Y‖²)` for one prediction.
pub fn ce_terms(p: &[f64], y: usize) -> (f64, f64) {
    let sq: f64 = p
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == y { (1.0 - v) * (1.0 - v) } else { v * v })
        .sum();
    (p[y], sq)
}

/// Bound check on explicit predictions.
pub fn ce_report_from(n: usize, preds: &[(Vec<f64>, usize)]) -> TheoremReport {
    assert!(n >= 2 && !preds.is_empty());
    let (mut s, mut v) = (0.0, 0.0);
    for (p, y) in preds {
        let (py, sq) = ce_terms(p, *y);
        s += py;
        v += sq;
    }
    let m = preds.len() as f64;
    ce_report(n, s / m, v / m, preds.len())
}

fn ce_report(n: usize, sigma: f64, empirical: f64, samples: usize) -> TheoremReport {
    let (lower, upper) = ce_bounds(n, sigma);
    TheoremReport {
        theorem: Theorem::Ce,
        n,
        sigma,
        samples,
        empirical,
        lower,
        upper,
    }
}

/// Logits `Z ~ N(μ·e_Y, I)` with `Y` uniform; the sample mean of `P_Y` is
/// plugged into both bounds.
pub fn verify_theorem_ce(n: usize, mu: f64, samples: usize, seed: u64) -> TheoremReport {
    assert!(n >= 2 && samples > 0);
    let run = |rng: &mut Xoshiro256PlusPlus, count: usize, want_sq: bool| {
        let mut z = vec![0.0; n];
        let mut total = 0.0;
        for _ in 0..count {
            let y = rng.random_range(0..n);
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            z[y] += mu;
            softmax(&mut z);
            let (py, sq) = ce_terms(&z, y);
            total += if want_sq { sq } else { py };
        }
        total
    };
    // Both passes replay the same streams, so they see identical samples.
    let sigma = chunked_mean(samples, seed, |rng, c| run(rng, c, false));
    let empirical = chunked_mean(samples, seed, |rng, c| run(rng, c, true));
    ce_report(n, sigma, empirical, samples)
}

/// One cell of the gradient-ratio surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceCell {
    pub sigma_img: f64,
    pub sigma_txt: f64,
    /// log₁₀ of the image norm over the lower / upper text bound, `None`
    /// where the ratio is 0 or unbounded.
    pub log_ratio_lower: Option<f64>,
    pub log_ratio_upper: Option<f64>,
}

/// A zero numerator (σ_img = 1) reports ratio 0 whatever the denominator.
fn log_ratio(num: f64, den: f64) -> Option<f64> {
    if num == 0.0 || den == 0.0 {
        None
    } else {
        Some((num / den).log10())
    }
}

pub fn ratio_surface(n: usize, grid: &[f64]) -> Vec<SurfaceCell> {
    assert!(n >= 2);
    let mut out = Vec::with_capacity(grid.len() * grid.len());
    for &si in grid {
        let num = 8.0 * (1.0 - si) / n as f64;
        for &st in grid {
            let (lo, up) = ce_bounds(n, st);
            out.push(SurfaceCell {
                sigma_img: si,
                sigma_txt: st,
                log_ratio_lower: log_ratio(num, lo),
                log_ratio_upper: log_ratio(num, up),
            });
        }
    }
    out
}

pub const SURFACE_HEADER: &str = "sigma_img,sigma_txt,log10_ratio_lower,log10_ratio_upper";

fn cell_value(v: Option<f64>, num_zero: bool) -> String {
    match v {
        Some(v) => format!("{v:.12}"),
        None if num_zero => "-inf".into(),
        None => "inf".into(),
    }
}

pub fn write_surface<W: Write>(mut w: W, n: usize, cells: &[SurfaceCell]) -> std::io::Result<()> {
    writeln!(w, "{SURFACE_HEADER}")?;
    for c in cells {
        let num_zero = 8.0 * (1.0 - c.sigma_img) / n as f64 == 0.0;
        writeln!(
            w,
            "{},{},{},{}",
            c.sigma_img,
            c.sigma_txt,
            cell_value(c.log_ratio_lower, num_zero),
            cell_value(c.log_ratio_upper, num_zero)
        )?;
    }
    Ok(())
}

pub const THEOREM_HEADER: &str = "theorem,n,sigma,samples,empirical,lower,upper,rel_err,bound_satisfied";

pub fn write_reports<W: Write>(mut w: W, reports: &[TheoremReport]) -> std::io::Result<()> {
    writeln!(w, "{THEOREM_HEADER}")?;
    for r in reports {
        let name = match r.theorem {
            Theorem::Mse => "mse",
            Theorem::Ce => "ce",
        };
        let rel = r.rel_err().map(|e| format!("{e:.6e}")).unwrap_or_default();
        let ok = r.bound_satisfied().map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{name},{},{:.12},{},{:.12e},{:.12e},{:.12e},{rel},{ok}",
            r.n, r.sigma, r.samples, r.empirical, r.lower, r.upper
        )?;
    }
    Ok(())
}
