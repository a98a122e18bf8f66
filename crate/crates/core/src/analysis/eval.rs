//! Oracle-based metrics of a trained model.

use std::io::Write;

use rayon::prelude::*;

use crate::backbone::{Backbone, ModelParams};
use crate::inference::{GenError, GenMode, GenSpec, Generator};
use crate::rng::derive_seed;
use crate::synthdata::{vqa_pair_for, Dataset, JointSample, Question};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub samples: usize,
    /// Vector→text output equals the reference caption token for token.
    pub caption_exact: f64,
    /// Vector→text output parses to the attributes of its input vector.
    pub attr_consistency: f64,
    /// Text→vector output decodes to the caption's attributes.
    pub t2i_accuracy: f64,
    /// Mean distance between adapted and frozen-base text→vector outputs
    /// under shared seeds.
    pub prior_drift: f64,
    /// Mean body length of vector→text captions.
    pub mean_caption_len: f64,
}

pub const EVAL_HEADER: &str = "samples,caption_exact,attr_consistency,t2i_accuracy,prior_drift,mean_caption_len";

impl EvalMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.12e},{:.6}",
            self.samples,
            self.caption_exact,
            self.attr_consistency,
            self.t2i_accuracy,
            self.prior_drift,
            self.mean_caption_len
        )
    }
}

fn spec_for(spec: &GenSpec, mode: GenMode, i: usize) -> GenSpec {
    GenSpec {
        mode,
        seed: derive_seed(spec.seed, i as u64),
        ..spec.clone()
    }
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n.max(1) as f64
}

/// Text→vector outputs of the adapted model and of its frozen base view
/// under the same seeds; returns the mean Euclidean distance.
pub fn prior_drift(bb: &Backbone, params: &ModelParams, held: &[JointSample], spec: &GenSpec) -> Result<f64, GenError> {
    let student = Generator::new(bb, params);
    let base = Generator {
        lora_enabled: false,
        ..student
    };
    let d: Vec<Result<f64, GenError>> = held
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let sp = spec_for(spec, GenMode::T2i, i);
            let a = student.text_to_vector(&s.y, &sp)?.x;
            let b = base.text_to_vector(&s.y, &sp)?.x;
            Ok(a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        })
        .collect();
    let d = d.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(mean(d.into_iter(), held.len()))
}

/// Vector→text metrics only: `(caption_exact, attr_consistency, mean_len)`.
pub fn caption_metrics(
    bb: &Backbone,
    params: &ModelParams,
    ds: &Dataset,
    held: &[JointSample],
    spec: &GenSpec,
) -> Result<(f64, f64, f64), GenError> {
    let g = Generator::new(bb, params);
    let rows: Vec<Result<(bool, bool, usize), GenError>> = held
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let y = g.vector_to_text(&s.x, &spec_for(spec, GenMode::I2t, i))?.y;
            Ok((y == s.y, ds.consistency(&s.x, &y), y.body().len()))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = rows.len();
    Ok((
        mean(rows.iter().map(|r| r.0 as u8 as f64), n),
        mean(rows.iter().map(|r| r.1 as u8 as f64), n),
        mean(rows.iter().map(|r| r.2 as f64), n),
    ))
}

pub fn evaluate(
    bb: &Backbone,
    params: &ModelParams,
    ds: &Dataset,
    held: &[JointSample],
    spec: &GenSpec,
) -> Result<EvalMetrics, GenError> {
    let g = Generator::new(bb, params);
    let (caption_exact, attr_consistency, mean_caption_len) = caption_metrics(bb, params, ds, held, spec)?;
    let hits: Vec<Result<bool, GenError>> = held
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let x = g.text_to_vector(&s.y, &spec_for(spec, GenMode::T2i, i))?.x;
            Ok(ds.oracle_decode(&x) == s.attrs)
        })
        .collect();
    let hits = hits.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalMetrics {
        samples: held.len(),
        caption_exact,
        attr_consistency,
        t2i_accuracy: mean(hits.iter().map(|&h| h as u8 as f64), hits.len()),
        prior_drift: prior_drift(bb, params, held, spec)?,
        mean_caption_len,
    })
}

/// Answer accuracy of span-constrained generation over every attribute
/// combination and question type. One jittered vector per combination.
pub fn vqa_accuracy(bb: &Backbone, params: &ModelParams, ds: &Dataset, spec: &GenSpec) -> Result<f64, GenError> {
    let g = Generator::new(bb, params);
    let mut jobs = Vec::new();
    for (k, (attrs, _)) in ds.vocab.all_captions().into_iter().enumerate() {
        let s = ds.sample_with(attrs, &mut crate::rng::stream(spec.seed, k as u64));
        for q in Question::ALL {
            jobs.push((s.clone(), q));
        }
    }
    let hits: Vec<Result<bool, GenError>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (s, q))| {
            let pair = vqa_pair_for(&ds.vocab, s, *q);
            let out = g.partial_text(&s.x, &pair.prompt, &pair.span, &spec_for(spec, GenMode::PartialText, i))?;
            Ok(out.y == pair.answered())
        })
        .collect();
    let hits = hits.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(mean(hits.iter().map(|&h| h as u8 as f64), hits.len()))
}

/// One point of the joint trajectory sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub p: f64,
    pub consistency: f64,
    pub mean_len: f64,
}

pub const SWEEP_HEADER: &str = "p,consistency,mean_caption_len";

pub fn joint_sweep(
    bb: &Backbone,
    params: &ModelParams,
    ds: &Dataset,
    p_grid: &[f64],
    samples: usize,
    spec: &GenSpec,
) -> Result<Vec<SweepPoint>, GenError> {
    let g = Generator::new(bb, params);
    p_grid
        .iter()
        .map(|&p| {
            let sp = GenSpec { p, ..spec.clone() };
            let rows: Vec<Result<(bool, usize), GenError>> = (0..samples)
                .into_par_iter()
                .map(|i| {
                    let out = g.joint_generate(&spec_for(&sp, GenMode::Joint, i))?;
                    Ok((ds.consistency(&out.x, &out.y), out.y.body().len()))
                })
                .collect();
            let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
            Ok(SweepPoint {
                p,
                consistency: mean(rows.iter().map(|r| r.0 as u8 as f64), samples),
                mean_len: mean(rows.iter().map(|r| r.1 as f64), samples),
            })
        })
        .collect()
}

pub fn write_sweep<W: Write>(mut w: W, points: &[SweepPoint]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for s in points {
        writeln!(w, "{},{:.6},{:.6}", s.p, s.consistency, s.mean_len)?;
    }
    Ok(())
}
