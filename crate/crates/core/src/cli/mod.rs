//! Command-line surface: dataset generation, training, sampling, theorem
//! checks, evaluation and the ablation runner.

mod checkpoint;
mod config;
mod train;

pub use checkpoint::{Checkpoint, CheckpointError, RawCheckpoint, MAGIC, VERSION};
pub use config::{hex, Config, ConfigError, KEYS};
pub use train::{load_checkpoint, train_protocol, TrainOutcome};

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analysis::{
    ce_report_from, evaluate, ratio_surface, run_experiment, verify_theorem_ce, verify_theorem_mse, vqa_accuracy,
    write_reports, write_surface, AnalysisError, Experiment, Setup, TheoremReport, EVAL_HEADER,
};
use crate::editflow::SpanMask;
use crate::inference::{write_samples, GenError, GenMode, GenSpec, Generator, SampleRecord};
use crate::rng::derive_seed;
use crate::synthdata::{dataset_sha256, read_dataset, write_dataset, Dataset, DataError};
use crate::trainer::TrainError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A failed command: message plus process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }

    pub fn io(m: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: m.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(format!("config: {e}"))
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Digest { .. } => Self::usage(format!("{e} (pass --force to load anyway)")),
            _ => Self::io(format!("checkpoint: {e}")),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = if e.is_numerical() || matches!(e, TrainError::NonFinite { .. }) {
            EXIT_NUMERIC
        } else {
            EXIT_USAGE
        };
        Self {
            code,
            message: format!("training: {e}"),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        let code = match e {
            GenError::Spec(_) => EXIT_USAGE,
            _ => EXIT_NUMERIC,
        };
        Self {
            code,
            message: format!("generation: {e}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) | DataError::Format { .. } => Self::io(format!("data: {e}")),
            _ => Self::usage(format!("data: {e}")),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Data(e) => e.into(),
            AnalysisError::Train(e) => e.into(),
            AnalysisError::Gen(e) => e.into(),
            AnalysisError::Model(e) => Self::usage(format!("model: {e}")),
            AnalysisError::Io(m) => Self::io(m),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

pub fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Ok(Config::parse(&text)?)
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dualflow", version, about = "Joint vector/text flows on a toy backbone")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset file and print its SHA-256.
    Gendata {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Base pretraining, uplift and span fine-tune, with checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training pool file; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Optimizer steps to run in this invocation (default: the rest of
        /// the protocol).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "joint")]
        mode: String,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long = "gamma-img")]
        gamma_img: Option<f64>,
        #[arg(long = "gamma-txt")]
        gamma_txt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Caption (t2i) or question (partial_text).
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Monte Carlo theorem checks and the ratio surface.
    Verify {
        #[arg(long)]
        theorem: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Points per axis of the surface grid.
        #[arg(long, default_value_t = 11)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Held-out metrics of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run one ablation end to end.
    Experiment {
        #[arg(long)]
        name: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = std::env::var("DUALFLOW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Gendata {
            config,
            count,
            seed,
            out,
        } => cmd_gendata(config.as_deref(), count, seed, &out).map(|sha| println!("{sha}")),
        Command::Train {
            config,
            data,
            steps,
            out,
            resume,
            force,
        } => {
            let cfg = load_config(config.as_deref())?;
            let out = out.unwrap_or_else(|| PathBuf::from(cfg.get("paths.out").unwrap_or("runs")));
            let o = train_protocol(&cfg, data.as_deref(), steps, &out, resume.as_deref(), force)?;
            println!("steps={} checkpoint={}", o.total_steps, o.checkpoint.display());
            Ok(())
        }
        Command::Sample {
            checkpoint,
            mode,
            p,
            gamma_img,
            gamma_txt,
            steps,
            n,
            seed,
            prompt,
            out,
            config,
            force,
        } => {
            let mode: GenMode = mode.parse().map_err(CliError::usage)?;
            let opts = SampleOpts {
                mode,
                p,
                gamma_img,
                gamma_txt,
                steps,
                n,
                seed,
                prompt,
            };
            let (summary, records) = cmd_sample(&checkpoint, config.as_deref(), force, &opts)?;
            match out {
                Some(path) => {
                    let mut w = create(&path)?;
                    write_samples(&mut w, &records).map_err(|e| io_err(&path, e))?;
                    w.flush().map_err(|e| io_err(&path, e))?;
                }
                None => write_samples(std::io::stdout().lock(), &records).map_err(|e| CliError::io(e.to_string()))?,
            }
            println!("{summary}");
            Ok(())
        }
        Command::Verify {
            theorem,
            n,
            sigma,
            samples,
            seed,
            grid,
            out,
        } => cmd_verify(&theorem, n, sigma, samples, seed, grid, out.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            out,
            config,
            force,
        } => {
            let row = cmd_eval(&checkpoint, data.as_deref(), config.as_deref(), force)?;
            let text = format!("{EVAL_HEADER},vqa_accuracy\n{row}\n");
            match out {
                Some(path) => std::fs::write(&path, &text).map_err(|e| io_err(&path, e))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Experiment { name, config, out } => {
            let name: Experiment = name.parse().map_err(CliError::usage)?;
            let cfg = load_config(config.as_deref())?;
            let out = out.unwrap_or_else(|| PathBuf::from(cfg.get("paths.out").unwrap_or("runs")).join(name.to_string()));
            let report = run_experiment(name, &cfg.experiment()?, &out)?;
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            let verdict = if report.claim { "holds" } else { "does not hold" };
            println!("{name}: {} (directional claim {verdict})", report.summary);
            Ok(())
        }
    }
}

/// Writes the dataset and returns its SHA-256.
pub fn cmd_gendata(config: Option<&Path>, count: Option<usize>, seed: Option<u64>, out: &Path) -> Result<String, CliError> {
    let cfg = load_config(config)?;
    let exp = cfg.experiment()?;
    let ds = Dataset::new(exp.data)?;
    let samples = ds.generate(count.unwrap_or(exp.data_count), seed.unwrap_or(exp.data_seed));
    let mut buf = Vec::new();
    write_dataset(&mut buf, &ds, &samples)?;
    std::fs::write(out, &buf).map_err(|e| io_err(out, e))?;
    Ok(dataset_sha256(&buf))
}

pub fn read_data_file(path: &Path, ds: &Dataset) -> Result<Vec<crate::synthdata::JointSample>, CliError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(read_dataset(BufReader::new(f), ds)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOpts {
    pub mode: GenMode,
    pub p: Option<f64>,
    pub gamma_img: Option<f64>,
    pub gamma_txt: Option<f64>,
    pub steps: Option<usize>,
    pub n: usize,
    pub seed: Option<u64>,
    pub prompt: Option<String>,
}

/// Returns the summary line and the records of a sample dump.
pub fn cmd_sample(
    checkpoint: &Path,
    config: Option<&Path>,
    force: bool,
    opts: &SampleOpts,
) -> Result<(String, Vec<SampleRecord>), CliError> {
    if opts.mode == GenMode::PartialText && opts.prompt.is_none() {
        return Err(CliError::usage("--mode partial_text requires --prompt"));
    }
    let (cfg, setup, ckpt) = load_checkpoint(checkpoint, config, force)?;
    let exp = cfg.experiment()?;
    let base = exp.gen.clone();
    let spec = GenSpec {
        mode: opts.mode,
        steps: opts.steps.unwrap_or(base.steps),
        p: opts.p.unwrap_or(base.p),
        gamma_img: opts.gamma_img.unwrap_or(base.gamma_img),
        gamma_txt: opts.gamma_txt.unwrap_or(base.gamma_txt),
        seed: opts.seed.unwrap_or(base.seed),
        ..base
    };
    spec.validate()?;
    let vocab = &setup.ds.vocab;
    let prompt = match &opts.prompt {
        Some(text) => Some(vocab.tokenize(text)?),
        None => None,
    };
    let g = Generator::new(&setup.bb, &ckpt.params);
    let captions = vocab.all_captions();
    let inputs = setup.ds.generate(opts.n, spec.seed);
    let mut records = Vec::with_capacity(opts.n);
    for (i, s) in inputs.iter().enumerate() {
        let sp = GenSpec {
            seed: derive_seed(spec.seed, i as u64),
            ..spec.clone()
        };
        let (x, y, consistent) = match opts.mode {
            GenMode::T2i => {
                let y = prompt.clone().unwrap_or_else(|| captions[i % captions.len()].1.clone());
                let x = g.text_to_vector(&y, &sp)?.x;
                let ok = setup.ds.consistency(&x, &y);
                (x, y, ok)
            }
            GenMode::I2t => {
                let y = g.vector_to_text(&s.x, &sp)?.y;
                (s.x.clone(), y.clone(), setup.ds.consistency(&s.x, &y))
            }
            GenMode::Joint => {
                let out = g.joint_generate(&sp)?;
                let ok = setup.ds.consistency(&out.x, &out.y);
                (out.x, out.y, ok)
            }
            GenMode::PartialText => {
                let q = prompt.as_ref().expect("checked above");
                let out = g.partial_text(&s.x, q, &SpanMask::before_eos(q.len()), &sp)?;
                let ok = answer_is_correct(&setup.ds, &s.attrs, q, &out.y);
                (s.x.clone(), out.y, ok)
            }
        };
        records.push(SampleRecord {
            id: i,
            mode: opts.mode,
            x,
            caption: vocab.detokenize(&y),
            consistent,
        });
    }
    let n = records.len().max(1) as f64;
    let rate = records.iter().filter(|r| r.consistent).count() as f64 / n;
    let mean_len = records
        .iter()
        .map(|r| r.caption.split_whitespace().count() as f64)
        .sum::<f64>()
        / n;
    Ok((format!("mode={} n={} consistency={rate:.6} mean_len={mean_len:.6}", opts.mode, records.len()), records))
}

/// A question prompt answered by exactly the attribute token it asks for.
fn answer_is_correct(
    ds: &Dataset,
    attrs: &crate::synthdata::Attrs,
    prompt: &crate::editflow::TokenSequence,
    out: &crate::editflow::TokenSequence,
) -> bool {
    use crate::synthdata::Question;
    let words: Vec<&str> = prompt.body().iter().map(|&t| ds.vocab.word(t)).collect();
    let q = match words.get(1) {
        Some(&"color") => Question::Color,
        Some(&"shape") => Question::Shape,
        Some(&"position") => Question::Position,
        _ => return false,
    };
    let body = out.body();
    let n = prompt.body().len();
    body.len() == n + 1 && body[..n] == *prompt.body() && body[n] == ds.vocab.attr_token(q, attrs.get(q))
}

pub const MSE_NS: [usize; 3] = [16, 256, 4096];
pub const MSE_SIGMAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
pub const CE_NS: [usize; 4] = [2, 4, 16, 4096];
pub const CE_MUS: [f64; 4] = [0.0, 1.0, 2.0, 4.0];
pub const CE_CONFIGS: usize = 20;
pub const MSE_TOL: f64 = 0.03;

/// The CE configurations of one `n`: every μ of the sweep, repeated with
/// fresh seeds up to `CE_CONFIGS`.
pub fn ce_suite(n: usize, samples: usize, seed: u64) -> Vec<TheoremReport> {
    (0..CE_CONFIGS)
        .map(|i| verify_theorem_ce(n, CE_MUS[i % CE_MUS.len()], samples, derive_seed(seed, (n * 1000 + i) as u64)))
        .collect()
}

/// The symmetric two-class case where the lower bound is attained.
pub fn ce_tight_case() -> TheoremReport {
    ce_report_from(2, &[(vec![0.5, 0.5], 0)])
}

pub fn cmd_verify(
    theorem: &str,
    n: Option<usize>,
    sigma: Option<f64>,
    samples: usize,
    seed: u64,
    grid: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if n.is_some_and(|n| n < 2) {
        return Err(CliError::usage("--n must be at least 2"));
    }
    if sigma.is_some_and(|s| !(0.0..=1.0).contains(&s)) {
        return Err(CliError::usage("--sigma must lie in [0, 1]"));
    }
    if samples == 0 {
        return Err(CliError::usage("--samples must be positive"));
    }
    let mut buf = Vec::new();
    let ok = match theorem {
        "mse" => {
            let ns: Vec<usize> = n.map_or(MSE_NS.to_vec(), |n| vec![n]);
            let sigmas: Vec<f64> = sigma.map_or(MSE_SIGMAS.to_vec(), |s| vec![s]);
            let mut reports = Vec::new();
            for &n in &ns {
                for &s in &sigmas {
                    reports.push(verify_theorem_mse(n, s, samples, derive_seed(seed, n as u64)));
                }
            }
            write_reports(&mut buf, &reports).map_err(|e| CliError::io(e.to_string()))?;
            reports.iter().all(|r| r.passes(MSE_TOL))
        }
        "ce" => {
            let ns: Vec<usize> = n.map_or(CE_NS.to_vec(), |n| vec![n]);
            let mut reports = vec![ce_tight_case()];
            for &n in &ns {
                reports.extend(ce_suite(n, samples, seed));
            }
            write_reports(&mut buf, &reports).map_err(|e| CliError::io(e.to_string()))?;
            reports.iter().all(|r| r.passes(0.0))
        }
        "surface" => {
            if grid < 2 {
                return Err(CliError::usage("--grid must be at least 2"));
            }
            let n = n.unwrap_or(4);
            let g: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
            write_surface(&mut buf, n, &ratio_surface(n, &g)).map_err(|e| CliError::io(e.to_string()))?;
            true
        }
        other => return Err(CliError::usage(format!("unknown theorem {other:?} (mse | ce | surface)"))),
    };
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| io_err(p, e))?;
        }
        None => std::io::stdout().write_all(&buf).map_err(|e| CliError::io(e.to_string()))?,
    }
    if ok {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_VERIFY,
            message: format!("{theorem}: verification failed"),
        })
    }
}

/// Metrics row (EVAL_HEADER columns plus VQA accuracy) of a checkpoint.
pub fn cmd_eval(checkpoint: &Path, data: Option<&Path>, config: Option<&Path>, force: bool) -> Result<String, CliError> {
    let (cfg, mut setup, ckpt) = load_checkpoint(checkpoint, config, force)?;
    let exp = cfg.experiment()?;
    if let Some(path) = data {
        setup.held = read_data_file(path, &setup.ds)?;
    }
    if setup.held.is_empty() {
        return Err(CliError::usage("held-out set is empty"));
    }
    let m = evaluate(&setup.bb, &ckpt.params, &setup.ds, &setup.held, &exp.gen)?;
    let vqa = vqa_accuracy(&setup.bb, &ckpt.params, &setup.ds, &exp.gen)?;
    Ok(format!("{},{vqa:.6}", m.csv_row()))
}

pub(crate) fn setup_for(cfg: &Config) -> Result<Setup, CliError> {
    let exp = cfg.experiment()?;
    Ok(Setup::new(&exp)?)
}
