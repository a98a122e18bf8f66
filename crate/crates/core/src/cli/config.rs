//! Flat `key=value` configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::ExperimentConfig;
use crate::backbone::ModelConfig;
use crate::editflow::{CountRule, DecodeOpts};
use crate::inference::GenSpec;
use crate::schedules::{ScheduleKind, ScheduleSpec};
use crate::synthdata::AttributeSpec;
use crate::trainer::{BalanceState, TeacherMode, TrainConfig};
use crate::trainer::{GroupHyper, OptimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key}: {detail}")]
    Value { key: String, detail: String },
}

/// `(key, default, description)`. Keys under `gen.`, `eval.` and `paths.`
/// do not enter the digest.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("model.hidden", "64", "backbone width"),
    ("model.blocks", "2", "residual blocks"),
    ("model.heads", "2", "attention heads"),
    ("model.ff_mult", "4", "feed-forward expansion"),
    ("model.time_dim", "16", "sinusoidal time features"),
    ("model.max_len", "16", "maximum tokens including EOS"),
    ("model.lora_rank", "4", "LoRA rank r"),
    ("model.lora_alpha", "4", "LoRA alpha"),
    ("model.seed", "0", "initialization seed"),
    ("data.colors", "red,green,blue,yellow", "color words"),
    ("data.shapes", "circle,square,triangle", "shape words"),
    ("data.positions", "left,right,top,bottom", "position words"),
    ("data.block_dims", "3,2,3", "prototype block dimensions"),
    ("data.jitter", "0.05", "jitter as a fraction of the minimum prototype gap"),
    ("data.count", "5000", "training pool size when no dataset file is given"),
    ("data.seed", "1", "training pool seed"),
    ("train.batch", "16", "elements per step"),
    ("train.seed", "0", "training stream seed"),
    ("train.base_steps", "2000", "phase 1 steps"),
    ("train.uplift_steps", "4000", "phase 2 steps"),
    ("train.vqa_steps", "1000", "span fine-tune steps"),
    ("train.schedule", "switched", "alternating_clean | independent | switched"),
    ("train.switch_step", "2000", "switched schedule: first alternating-clean step"),
    ("train.teacher", "same_noise", "none | same_noise | clean_text"),
    ("train.checkpoint_every", "1000", "checkpoint interval in steps (0 = final only)"),
    ("balance.enabled", "true", "adaptive text weight"),
    ("balance.lambda_init", "0.05", "initial text weight"),
    ("balance.beta", "0.99", "EMA decay of the text weight"),
    ("balance.eps", "1e-8", "ratio denominator guard"),
    ("balance.ratio_scale", "5", "ratio multiplier before the EMA"),
    ("balance.every", "100", "probe interval"),
    ("balance.probe_batch", "3", "probe micro-batch"),
    ("optim.base_lr", "1e-3", "phase 1 learning rate"),
    ("optim.base_wd", "0", "phase 1 weight decay"),
    ("optim.adapter_lr", "1e-3", "adapter group learning rate"),
    ("optim.adapter_wd", "0", "adapter group weight decay"),
    ("optim.head_lr", "1e-3", "head group learning rate"),
    ("optim.head_wd", "1e-2", "head group weight decay"),
    ("optim.beta1", "0.9", "first-moment decay"),
    ("optim.beta2", "0.999", "second-moment decay"),
    ("optim.eps", "1e-8", "moment denominator guard"),
    ("optim.clip", "2", "global gradient norm clip"),
    ("optim.ema_decay", "0.9995", "weight EMA decay"),
    ("optim.warmup", "500", "linear warmup steps"),
    ("gen.steps", "28", "sampling steps"),
    ("gen.p", "0", "joint trajectory exponent"),
    ("gen.gamma_img", "1", "vector guidance scale"),
    ("gen.gamma_txt", "1", "text guidance scale"),
    ("gen.temperature", "0.7", "token temperature"),
    ("gen.top_k", "1", "token top-k (0 = off)"),
    ("gen.counts", "expected", "expected | sampled"),
    ("gen.seed", "0", "sampling seed"),
    ("eval.count", "500", "held-out samples"),
    ("eval.seed", "99", "held-out seed"),
    ("eval.curve_count", "100", "held-out samples of per-checkpoint curves"),
    ("eval.sweep_samples", "500", "samples per joint sweep point"),
    ("paths.out", "runs", "default output directory"),
];

fn is_digested(key: &str) -> bool {
    !(key.starts_with("gen.") || key.starts_with("eval.") || key.starts_with("paths."))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Config {
    /// Defaults overlaid with the pairs of `text`. The result is validated.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            c.set(k.trim(), v.trim())?;
        }
        c.experiment()?;
        Ok(c)
    }

    /// Sets one key without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError::UnknownKey(key.to_string())),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Every key in sorted order, one `key=value` per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// SHA-256 over the rendered model, data and training keys.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.values.iter().filter(|(k, _)| is_digested(k)) {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().into()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        raw.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.to_string(),
            detail: format!("{raw:?}: {e}"),
        })
    }

    fn ranged<T>(&self, key: &str, ok: impl Fn(&T) -> bool, want: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let v = self.parsed(key)?;
        if ok(&v) {
            Ok(v)
        } else {
            Err(ConfigError::Value {
                key: key.to_string(),
                detail: format!("{:?} must be {want}", self.get(key).unwrap_or("")),
            })
        }
    }

    fn positive(&self, key: &str) -> Result<f64, ConfigError> {
        self.ranged(key, |v: &f64| *v > 0.0 && v.is_finite(), "positive")
    }

    fn nonneg(&self, key: &str) -> Result<f64, ConfigError> {
        self.ranged(key, |v: &f64| *v >= 0.0 && v.is_finite(), "nonnegative")
    }

    fn unit_open(&self, key: &str) -> Result<f64, ConfigError> {
        self.ranged(key, |v: &f64| *v > 0.0 && *v < 1.0, "in (0, 1)")
    }

    fn count(&self, key: &str) -> Result<usize, ConfigError> {
        self.ranged(key, |v: &usize| *v >= 1, "at least 1")
    }

    fn words(&self, key: &str) -> Vec<String> {
        self.get(key)
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(String::from)
            .collect()
    }

    fn value_err(key: &str, detail: impl ToString) -> ConfigError {
        ConfigError::Value {
            key: key.to_string(),
            detail: detail.to_string(),
        }
    }

    pub fn attribute_spec(&self) -> Result<AttributeSpec, ConfigError> {
        let dims: Vec<usize> = self
            .words("data.block_dims")
            .iter()
            .map(|w| w.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| Self::value_err("data.block_dims", e))?;
        let block_dims: [usize; 3] = dims
            .try_into()
            .map_err(|_| Self::value_err("data.block_dims", "needs three dimensions"))?;
        let mut spec = AttributeSpec {
            colors: self.words("data.colors"),
            shapes: self.words("data.shapes"),
            positions: self.words("data.positions"),
            block_dims,
            jitter_sigma: 0.0,
        };
        let frac = self.ranged("data.jitter", |v: &f64| (0.0..0.5).contains(v), "in [0, 0.5)")?;
        if spec.lists().iter().any(|l| l.is_empty()) || block_dims.contains(&0) {
            return Err(Self::value_err("data", "attribute lists and block dimensions must be nonempty"));
        }
        spec.jitter_sigma = frac * spec.prototypes().min_gap();
        spec.validate().map_err(|e| Self::value_err("data", e))?;
        Ok(spec)
    }

    /// The typed configuration; fails on the first out-of-range value.
    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let data = self.attribute_spec()?;
        let vocab = data.vocab();
        let model = ModelConfig {
            d: data.d(),
            vocab_size: vocab.len(),
            eos: vocab.eos(),
            max_len: self.ranged("model.max_len", |v: &usize| *v >= 10, "at least 10")?,
            hidden: self.count("model.hidden")?,
            blocks: self.count("model.blocks")?,
            heads: self.count("model.heads")?,
            ff_mult: self.count("model.ff_mult")?,
            time_dim: self.ranged("model.time_dim", |v: &usize| *v >= 2 && v.is_multiple_of(2), "even and at least 2")?,
            lora_rank: self.count("model.lora_rank")?,
            lora_alpha: self.positive("model.lora_alpha")?,
        };
        model.validate().map_err(|e| Self::value_err("model", e))?;

        let kind: ScheduleKind = self.parsed("train.schedule")?;
        let schedule = ScheduleSpec {
            kind,
            switch_step: self.parsed("train.switch_step")?,
        };
        let teacher: TeacherMode = self.parsed("train.teacher")?;
        let balance = BalanceState {
            lambda_txt: self.positive("balance.lambda_init")?,
            beta: self.unit_open("balance.beta")?,
            eps: self.positive("balance.eps")?,
            ratio_scale: self.positive("balance.ratio_scale")?,
            estimate_every: self.ranged("balance.every", |v: &u64| *v >= 1, "at least 1")?,
            probe_batch: self.count("balance.probe_batch")?,
        };
        let optim = OptimConfig {
            base: GroupHyper {
                lr: self.positive("optim.base_lr")?,
                weight_decay: self.nonneg("optim.base_wd")?,
            },
            adapter: GroupHyper {
                lr: self.positive("optim.adapter_lr")?,
                weight_decay: self.nonneg("optim.adapter_wd")?,
            },
            head: GroupHyper {
                lr: self.positive("optim.head_lr")?,
                weight_decay: self.nonneg("optim.head_wd")?,
            },
            beta1: self.ranged("optim.beta1", |v: &f64| (0.0..1.0).contains(v), "in [0, 1)")?,
            beta2: self.ranged("optim.beta2", |v: &f64| (0.0..1.0).contains(v), "in [0, 1)")?,
            eps: self.positive("optim.eps")?,
            clip_norm: self.positive("optim.clip")?,
            ema_decay: self.ranged("optim.ema_decay", |v: &f64| (0.0..=1.0).contains(v), "in [0, 1]")?,
            warmup_steps: self.parsed("optim.warmup")?,
        };
        let train = TrainConfig {
            batch: self.count("train.batch")?,
            seed: self.parsed("train.seed")?,
            schedule,
            teacher,
            balance,
            balance_enabled: self.parsed("balance.enabled")?,
            optim,
        };
        let counts = match self.get("gen.counts") {
            Some("expected") => CountRule::Expected,
            Some("sampled") => CountRule::Sampled,
            other => return Err(Self::value_err("gen.counts", format!("{other:?} is not expected|sampled"))),
        };
        let gen = GenSpec {
            steps: self.count("gen.steps")?,
            p: self.ranged("gen.p", |v: &f64| v.is_finite(), "finite")?,
            gamma_img: self.nonneg("gen.gamma_img")?,
            gamma_txt: self.nonneg("gen.gamma_txt")?,
            decode: DecodeOpts {
                temperature: self.nonneg("gen.temperature")?,
                top_k: self.parsed("gen.top_k")?,
                counts,
            },
            seed: self.parsed("gen.seed")?,
            ..GenSpec::default()
        };
        Ok(ExperimentConfig {
            model,
            model_seed: self.parsed("model.seed")?,
            data,
            data_count: self.parsed("data.count")?,
            data_seed: self.parsed("data.seed")?,
            train,
            base_steps: self.parsed("train.base_steps")?,
            uplift_steps: self.parsed("train.uplift_steps")?,
            vqa_steps: self.parsed("train.vqa_steps")?,
            eval_count: self.count("eval.count")?,
            eval_seed: self.parsed("eval.seed")?,
            checkpoint_every: self.parsed("train.checkpoint_every")?,
            curve_count: self.count("eval.curve_count")?,
            sweep_samples: self.count("eval.sweep_samples")?,
            gen,
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
