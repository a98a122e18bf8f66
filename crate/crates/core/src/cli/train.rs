use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::RawCheckpoint;
use super::{create, io_err, read_data_file, setup_for, Checkpoint, CliError, Config};
use crate::analysis::Setup;
use crate::trainer::{Phase, TrainState, METRICS_HEADER};

/// Where a training invocation stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub total_steps: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Reads a checkpoint, rebuilding the model from `config` when given and
/// from the checkpoint's config echo otherwise.
pub fn load_checkpoint(path: &Path, config: Option<&Path>, force: bool) -> Result<(Config, Setup, Checkpoint), CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let raw = RawCheckpoint::read(BufReader::new(f))?;
    let stored = Config::parse(&raw.config())?;
    let cfg = match config {
        Some(p) => super::load_config(Some(p))?,
        None => stored,
    };
    let setup = setup_for(&cfg)?;
    let ckpt = raw.bind(&setup.init)?;
    ckpt.check_digest(&cfg.digest(), force)?;
    Ok((cfg, setup, ckpt))
}

fn phase_budget(cfg: &crate::analysis::ExperimentConfig, phase: Phase) -> u64 {
    match phase {
        Phase::Base => cfg.base_steps,
        Phase::Uplift => cfg.uplift_steps,
        Phase::Vqa => cfg.vqa_steps,
    }
}

fn next_phase(phase: Phase) -> Option<Phase> {
    match phase {
        Phase::Base => Some(Phase::Uplift),
        Phase::Uplift => Some(Phase::Vqa),
        Phase::Vqa => None,
    }
}

/// Runs up to `steps` optimizer steps of the base → uplift → VQA protocol,
/// starting fresh or from `resume`. Writes `metrics.csv` (appended on
/// resume), periodic `ckpt_<step>.dflw` files, one `<phase>.dflw` per
/// completed phase and `checkpoint.dflw`.
pub fn train_protocol(
    cfg: &Config,
    data: Option<&Path>,
    steps: Option<u64>,
    out: &Path,
    resume: Option<&Path>,
    force: bool,
) -> Result<TrainOutcome, CliError> {
    let exp = cfg.experiment()?;
    let mut setup = setup_for(cfg)?;
    if let Some(path) = data {
        setup.data = read_data_file(path, &setup.ds)?;
    }
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let (mut params, mut state, mut total) = match resume {
        Some(path) => {
            let f = File::open(path).map_err(|e| io_err(path, e))?;
            let ck = Checkpoint::read(BufReader::new(f), &setup.init)?;
            ck.check_digest(&cfg.digest(), force)?;
            (ck.params, ck.state, ck.step)
        }
        None => {
            let p = setup.init.clone();
            let s = TrainState::new(Phase::Base, &p, exp.train.balance);
            (p, s, 0)
        }
    };

    let metrics_path = out.join("metrics.csv");
    let fresh = resume.is_none() || !metrics_path.exists();
    let mut metrics = if fresh {
        let mut w = create(&metrics_path)?;
        writeln!(w, "{METRICS_HEADER}").map_err(|e| io_err(&metrics_path, e))?;
        w
    } else {
        let f = OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| io_err(&metrics_path, e))?;
        BufWriter::new(f)
    };

    let trainer = setup.trainer(&exp.train);
    let rendered = cfg.render();
    let digest = cfg.digest();
    let save = |path: &Path, params: &crate::backbone::ModelParams, state: &TrainState, total: u64| {
        let ck = Checkpoint {
            step: total,
            digest,
            params: params.clone(),
            state: state.clone(),
            config: rendered.clone(),
        };
        let mut w = create(path)?;
        ck.write(&mut w)?;
        w.flush().map_err(|e| io_err(path, e))
    };

    let mut remaining = steps.unwrap_or(u64::MAX);
    let mut last_good: Option<PathBuf> = resume.map(Path::to_path_buf);
    loop {
        if state.step >= phase_budget(&exp, state.phase) {
            save(&out.join(format!("{}.dflw", state.phase.as_str())), &params, &state, total)?;
            match next_phase(state.phase) {
                Some(p) => {
                    state = TrainState::new(p, &params, exp.train.balance);
                    continue;
                }
                None => break,
            }
        }
        if remaining == 0 {
            break;
        }
        let m = trainer.step(&mut params, &mut state).map_err(|e| {
            let mut err = CliError::from(e);
            if let Some(p) = &last_good {
                err.message.push_str(&format!("; last good checkpoint {}", p.display()));
            }
            err
        })?;
        writeln!(metrics, "{}", m.csv_row()).map_err(|e| io_err(&metrics_path, e))?;
        total += 1;
        remaining -= 1;
        if exp.checkpoint_every > 0 && total % exp.checkpoint_every == 0 {
            let path = out.join(format!("ckpt_{total:08}.dflw"));
            save(&path, &params, &state, total)?;
            last_good = Some(path);
        }
    }
    metrics.flush().map_err(|e| io_err(&metrics_path, e))?;
    let final_path = out.join("checkpoint.dflw");
    save(&final_path, &params, &state, total)?;
    Ok(TrainOutcome {
        total_steps: total,
        checkpoint: final_path,
        metrics: metrics_path,
    })
}
