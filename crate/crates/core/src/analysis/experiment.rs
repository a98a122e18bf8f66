//! Desk-scale ablations: gradient balancing (A2), teacher matching (A3),
//! training schedules (A4), and the joint trajectory sweep.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::eval::{caption_metrics, evaluate, joint_sweep, write_sweep, EvalMetrics, SweepPoint, EVAL_HEADER};
use super::AnalysisError;
use crate::backbone::{Backbone, ModelConfig, ModelParams};
use crate::inference::GenSpec;
use crate::schedules::{ScheduleKind, ScheduleSpec, P_GRID};
use crate::synthdata::{AttributeSpec, Dataset, JointSample};
use crate::trainer::{Phase, StepMetrics, TeacherMode, TrainConfig, TrainState, Trainer};

/// Everything a training + evaluation run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub model_seed: u64,
    pub data: AttributeSpec,
    pub data_count: usize,
    pub data_seed: u64,
    pub train: TrainConfig,
    pub base_steps: u64,
    pub uplift_steps: u64,
    pub vqa_steps: u64,
    pub eval_count: usize,
    pub eval_seed: u64,
    /// Interval of the per-checkpoint caption curves of A4.
    pub checkpoint_every: u64,
    /// Held-out size of the per-checkpoint curves.
    pub curve_count: usize,
    pub sweep_samples: usize,
    pub gen: GenSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let uplift_steps = 4000;
        let mut train = TrainConfig {
            schedule: ScheduleSpec::switched(uplift_steps / 2),
            ..TrainConfig::default()
        };
        train.optim.adapter.lr = 1e-3;
        train.optim.head.lr = 1e-3;
        Self {
            model: ModelConfig::default(),
            model_seed: 0,
            data: AttributeSpec::default(),
            data_count: 5000,
            data_seed: 1,
            train,
            base_steps: 2000,
            uplift_steps,
            vqa_steps: 1000,
            eval_count: 500,
            eval_seed: 99,
            checkpoint_every: 1000,
            curve_count: 100,
            sweep_samples: 500,
            gen: GenSpec::default(),
        }
    }
}

/// An uplift run from a base model: parameter snapshots every
/// `checkpoint_every` steps (the last one at the final step) and the
/// per-step metrics.
#[derive(Debug, Clone)]
pub struct UpliftRun {
    pub snapshots: Vec<(u64, ModelParams)>,
    pub metrics: Vec<StepMetrics>,
}

impl UpliftRun {
    pub fn last(&self) -> &ModelParams {
        &self.snapshots.last().expect("at least one snapshot").1
    }
}

/// Dataset, model and training pool shared by every run of a config, with
/// a cache of finished runs so experiments that need the same run share it.
pub struct Setup {
    pub ds: Dataset,
    pub data: Vec<JointSample>,
    pub held: Vec<JointSample>,
    pub bb: Backbone,
    pub init: ModelParams,
    bases: Mutex<HashMap<String, Arc<ModelParams>>>,
    runs: Mutex<HashMap<String, Arc<UpliftRun>>>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, AnalysisError> {
        let ds = Dataset::new(cfg.data.clone())?;
        let data = ds.generate(cfg.data_count, cfg.data_seed);
        let held = ds.generate(cfg.eval_count, cfg.eval_seed);
        let (bb, init) = Backbone::init(cfg.model.clone(), cfg.model_seed)?;
        Ok(Self {
            ds,
            data,
            held,
            bb,
            init,
            bases: Mutex::new(HashMap::new()),
            runs: Mutex::new(HashMap::new()),
        })
    }

    pub fn trainer(&self, train: &TrainConfig) -> Trainer<'_> {
        Trainer {
            bb: &self.bb,
            cfg: train.clone(),
            data: &self.data,
            vocab: Some(&self.ds.vocab),
        }
    }

    /// Runs `steps` of `phase` starting from `params`, continuing `state`
    /// when given.
    pub fn train(
        &self,
        params: &mut ModelParams,
        state: Option<TrainState>,
        phase: Phase,
        train: &TrainConfig,
        steps: u64,
        sink: impl FnMut(&StepMetrics),
    ) -> Result<TrainState, AnalysisError> {
        let mut state = state.unwrap_or_else(|| TrainState::new(phase, params, train.balance));
        self.trainer(train).run(params, &mut state, steps, sink)?;
        Ok(state)
    }

    /// Phase 1 from the initial parameters (cached).
    pub fn base(&self, cfg: &ExperimentConfig) -> Result<Arc<ModelParams>, AnalysisError> {
        let key = format!("{:?}/{}", cfg.train, cfg.base_steps);
        if let Some(p) = self.bases.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let mut p = self.init.clone();
        self.train(&mut p, None, Phase::Base, &cfg.train, cfg.base_steps, |_| {})?;
        let p = Arc::new(p);
        self.bases.lock().expect("cache lock").insert(key, p.clone());
        Ok(p)
    }

    /// Phase 2 from `base` under `train` (cached on the base, the training
    /// config, the step count and the snapshot interval).
    pub fn uplift(
        &self,
        base: &ModelParams,
        train: &TrainConfig,
        steps: u64,
        every: u64,
    ) -> Result<Arc<UpliftRun>, AnalysisError> {
        let fingerprint: f64 = base.tensors().iter().flat_map(|t| t.values()).sum();
        let key = format!("{:016x}/{train:?}/{steps}/{every}", fingerprint.to_bits());
        if let Some(r) = self.runs.lock().expect("cache lock").get(&key) {
            return Ok(r.clone());
        }
        let mut p = base.clone();
        let mut metrics = Vec::new();
        let mut snapshots = Vec::new();
        let mut state = None;
        let mut done = 0;
        let every = if every == 0 { steps.max(1) } else { every };
        while done < steps {
            let n = every.min(steps - done);
            state = Some(self.train(&mut p, state, Phase::Uplift, train, n, |m| metrics.push(m.clone()))?);
            done += n;
            snapshots.push((done, p.clone()));
        }
        if snapshots.is_empty() {
            snapshots.push((0, p));
        }
        let run = Arc::new(UpliftRun { snapshots, metrics });
        self.runs.lock().expect("cache lock").insert(key, run.clone());
        Ok(run)
    }

    /// The default uplift run of `cfg`.
    pub fn main_run(&self, cfg: &ExperimentConfig) -> Result<Arc<UpliftRun>, AnalysisError> {
        let base = self.base(cfg)?;
        self.uplift(&base, &cfg.train, cfg.uplift_steps, cfg.checkpoint_every)
    }

    pub fn evaluate(&self, params: &ModelParams, gen: &GenSpec) -> Result<EvalMetrics, AnalysisError> {
        Ok(evaluate(&self.bb, params, &self.ds, &self.held, gen)?)
    }

    /// The first `count` held-out samples.
    pub fn held_prefix(&self, count: usize) -> &[JointSample] {
        &self.held[..count.min(self.held.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    A2Balance,
    A3Teacher,
    A4Schedule,
    JointSweep,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::A2Balance => "A2_balance",
            Experiment::A3Teacher => "A3_teacher",
            Experiment::A4Schedule => "A4_schedule",
            Experiment::JointSweep => "joint_sweep",
        })
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "A2_balance" => Ok(Experiment::A2Balance),
            "A3_teacher" => Ok(Experiment::A3Teacher),
            "A4_schedule" => Ok(Experiment::A4Schedule),
            "joint_sweep" => Ok(Experiment::JointSweep),
            _ => Err(format!("unknown experiment {s:?}")),
        }
    }
}

/// Files written by an experiment plus its directional verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: Experiment,
    pub files: Vec<PathBuf>,
    pub claim: bool,
    pub summary: String,
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), AnalysisError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| AnalysisError::Io(format!("{}: {e}", path.display())))?;
    Ok((path, BufWriter::new(f)))
}

fn io(e: std::io::Error) -> AnalysisError {
    AnalysisError::Io(e.to_string())
}

/// Population variance.
pub fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// A2 probe trace: `(step, raw scaled ratio, λ_txt after the update)`.
pub fn balance_trace(run: &UpliftRun, beta: f64) -> Vec<(u64, f64, f64)> {
    run.metrics
        .iter()
        .filter_map(|m| {
            m.probe
                .map(|pr| (m.step, pr.ratio, m.lambda_txt + (1.0 - beta) * (pr.ratio - m.lambda_txt)))
        })
        .collect()
}

pub fn run_experiment(
    name: Experiment,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<ExperimentReport, AnalysisError> {
    run_experiment_in(&Setup::new(cfg)?, name, cfg, out)
}

/// Like [`run_experiment`] but reusing the runs cached in `setup`.
pub fn run_experiment_in(
    setup: &Setup,
    name: Experiment,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<ExperimentReport, AnalysisError> {
    std::fs::create_dir_all(out).map_err(io)?;
    let base = setup.base(cfg)?;
    let small = setup.held_prefix(cfg.curve_count);
    match name {
        Experiment::A2Balance => {
            let run = setup.main_run(cfg)?;
            let rows = balance_trace(&run, cfg.train.balance.beta);
            let (path, mut w) = create(out, "a2_balance.csv")?;
            writeln!(w, "step,raw_ratio,lambda_txt").map_err(io)?;
            for (s, r, l) in &rows {
                writeln!(w, "{s},{r:.12e},{l:.12e}").map_err(io)?;
            }
            w.flush().map_err(io)?;
            let raw: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let ema: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let (vr, ve) = (variance(&raw), variance(&ema));
            Ok(ExperimentReport {
                name,
                files: vec![path],
                claim: !rows.is_empty() && ve < vr,
                summary: format!("var(ema)={ve:.6e} var(raw)={vr:.6e} probes={}", rows.len()),
            })
        }
        Experiment::A3Teacher => {
            let (path, mut w) = create(out, "a3_teacher.csv")?;
            writeln!(w, "teacher,{EVAL_HEADER}").map_err(io)?;
            let mut drift = Vec::new();
            for teacher in [TeacherMode::None, TeacherMode::SameNoise, TeacherMode::CleanText] {
                let train = TrainConfig {
                    teacher,
                    ..cfg.train.clone()
                };
                let run = setup.uplift(&base, &train, cfg.uplift_steps, cfg.checkpoint_every)?;
                let m = evaluate(&setup.bb, run.last(), &setup.ds, small, &cfg.gen)?;
                writeln!(w, "{teacher},{}", m.csv_row()).map_err(io)?;
                drift.push(m.prior_drift);
            }
            w.flush().map_err(io)?;
            Ok(ExperimentReport {
                name,
                files: vec![path],
                claim: drift[1] < drift[0],
                summary: format!("drift fm={:.6} sn={:.6} ct={:.6}", drift[0], drift[1], drift[2]),
            })
        }
        Experiment::A4Schedule => {
            let arms = [
                ("ac", ScheduleSpec::alternating_clean()),
                ("ind", ScheduleSpec::independent()),
                ("switched", switched_arm(cfg)),
            ];
            let mut files = Vec::new();
            let mut finals = Vec::new();
            let (final_path, mut fw) = create(out, "a4_final.csv")?;
            writeln!(fw, "arm,caption_exact,attr_consistency,mean_caption_len").map_err(io)?;
            for (arm, schedule) in arms {
                let train = TrainConfig {
                    schedule,
                    ..cfg.train.clone()
                };
                let run = setup.uplift(&base, &train, cfg.uplift_steps, cfg.checkpoint_every)?;
                let (path, mut w) = create(out, &format!("a4_{arm}.csv"))?;
                writeln!(w, "step,caption_exact,attr_consistency,mean_caption_len").map_err(io)?;
                for (step, p) in &run.snapshots {
                    let (em, cons, len) = caption_metrics(&setup.bb, p, &setup.ds, small, &cfg.gen)?;
                    writeln!(w, "{step},{em:.6},{cons:.6},{len:.6}").map_err(io)?;
                }
                w.flush().map_err(io)?;
                files.push(path);
                // The verdict uses the full held-out set, not the curve subset.
                let (em, cons, len) = caption_metrics(&setup.bb, run.last(), &setup.ds, &setup.held, &cfg.gen)?;
                writeln!(fw, "{arm},{em:.6},{cons:.6},{len:.6}").map_err(io)?;
                finals.push(em);
            }
            fw.flush().map_err(io)?;
            files.push(final_path);
            Ok(ExperimentReport {
                name,
                files,
                claim: finals[2] >= finals[1],
                summary: format!("final exact ac={:.4} ind={:.4} switched={:.4}", finals[0], finals[1], finals[2]),
            })
        }
        Experiment::JointSweep => {
            let run = setup.main_run(cfg)?;
            let points = joint_sweep(&setup.bb, run.last(), &setup.ds, &P_GRID, cfg.sweep_samples, &cfg.gen)?;
            let (path, w) = create(out, "joint_sweep.csv")?;
            write_sweep(w, &points).map_err(io)?;
            let (peak, monotone) = sweep_claims(&points);
            Ok(ExperimentReport {
                name,
                files: vec![path],
                claim: peak && monotone,
                summary: format!("peak at p∈{{-2.5,0}}: {peak}, length nondecreasing: {monotone}; {}", sweep_summary(&points)),
            })
        }
    }
}

/// The configured schedule when it is a switched one, else a switch at
/// half the uplift budget.
fn switched_arm(cfg: &ExperimentConfig) -> ScheduleSpec {
    match cfg.train.schedule.kind {
        ScheduleKind::Switched => cfg.train.schedule,
        _ => ScheduleSpec::switched(cfg.uplift_steps / 2),
    }
}

/// `(argmax of consistency lies at p ∈ {−2.5, 0}, mean length nondecreasing
/// in p)`. Ties in the maximum resolve to the first grid point.
pub fn sweep_claims(points: &[SweepPoint]) -> (bool, bool) {
    let mut best = 0;
    for (i, s) in points.iter().enumerate() {
        if s.consistency > points[best].consistency {
            best = i;
        }
    }
    let peak = points.get(best).is_some_and(|s| s.p == -2.5 || s.p == 0.0);
    let monotone = points.windows(2).all(|w| w[1].mean_len >= w[0].mean_len);
    (peak, monotone)
}

pub fn sweep_summary(points: &[SweepPoint]) -> String {
    points
        .iter()
        .map(|s| format!("p={} cons={:.3} len={:.3}", s.p, s.consistency, s.mean_len))
        .collect::<Vec<_>>()
        .join("; ")
}
