//! Insertion flow over token sequences.
//!
//! The forward process deletes every non-EOS token independently, keeping it
//! with probability `tau`; the learned reverse process inserts tokens back
//! into the gaps left of each retained position. EOS is the anchor: it is
//! never deleted, never inserted, and carries the prediction for the final
//! gap.

mod corrupt;
mod guidance;
mod loss;
mod sampler;

use thiserror::Error;

pub use corrupt::{align, corrupt, corruption_pmf, CorruptedText};
pub use guidance::cfg_combine;
pub use loss::{count_loss, token_loss, token_loss_guard_hits, zip_loss, LOG_FLOOR};
pub use sampler::{
    decode_token, reverse_step, sample_poisson, sample_zero_truncated_poisson, time_change, CountRule,
    DecodeOpts, SpanMask, StepOutcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("sequence must end with exactly one EOS ({eos})")]
    Eos { eos: usize },
    #[error("token {token} outside vocabulary of size {vocab}")]
    Token { token: usize, vocab: usize },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("prediction covers {got} positions, sequence has {want}")]
    Misaligned { got: usize, want: usize },
    #[error("rate must be positive, got {0}")]
    Rate(f64),
    #[error("gate {0} outside [0, 1]")]
    Gate(f64),
    #[error("token distribution invalid: {0}")]
    Distribution(String),
    #[error("time {0} outside [0, 1]")]
    Time(f64),
    #[error("guidance scale must be nonnegative, got {0}")]
    Guidance(f64),
    #[error("sequence too long for exhaustive enumeration ({0} > 12 tokens)")]
    Enumeration(usize),
    #[error("no token keeps probability mass after guidance at position {0}")]
    Renormalize(usize),
}

/// Vocabulary layout shared by every sequence in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqSpec {
    pub vocab_size: usize,
    pub eos: usize,
    /// Maximum length including EOS.
    pub max_len: usize,
}

impl SeqSpec {
    /// Number of token identities the reverse process may insert.
    pub fn insertable(&self) -> usize {
        self.vocab_size - 1
    }

    /// Position of `token` among insertable identities (EOS skipped).
    pub fn insertable_index(&self, token: usize) -> Option<usize> {
        match token.cmp(&self.eos) {
            std::cmp::Ordering::Less => Some(token),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => (token < self.vocab_size).then(|| token - 1),
        }
    }

    pub fn token_of_insertable(&self, j: usize) -> usize {
        if j < self.eos {
            j
        } else {
            j + 1
        }
    }
}

/// Token list terminated by a single EOS anchor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<usize>, spec: &SeqSpec) -> Result<Self, EditError> {
        if tokens.last() != Some(&spec.eos) || tokens.iter().filter(|&&t| t == spec.eos).count() != 1 {
            return Err(EditError::Eos { eos: spec.eos });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= spec.vocab_size) {
            return Err(EditError::Token {
                token: bad,
                vocab: spec.vocab_size,
            });
        }
        if tokens.len() > spec.max_len {
            return Err(EditError::TooLong {
                len: tokens.len(),
                max_len: spec.max_len,
            });
        }
        Ok(Self { tokens })
    }

    /// The EOS-only sequence ε.
    pub fn empty(spec: &SeqSpec) -> Self {
        Self {
            tokens: vec![spec.eos],
        }
    }

    pub(crate) fn from_raw(tokens: Vec<usize>) -> Self {
        Self { tokens }
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    /// Tokens without the trailing EOS.
    pub fn body(&self) -> &[usize] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == 1
    }
}

/// Per-position heads of the reverse process, one entry per retained token
/// (EOS included).
#[derive(Debug, Clone, PartialEq)]
pub struct InsertionPrediction {
    /// Probability that the gap left of the position is nonempty.
    pub gate: Vec<f64>,
    /// Poisson rate of the insertion count given a nonempty gap.
    pub rate: Vec<f64>,
    /// Distribution over token ids (full vocabulary, zero mass on EOS).
    pub token_dist: Vec<Vec<f64>>,
}

impl InsertionPrediction {
    pub fn len(&self) -> usize {
        self.gate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gate.is_empty()
    }

    pub fn validate(&self) -> Result<(), EditError> {
        if self.rate.len() != self.gate.len() || self.token_dist.len() != self.gate.len() {
            return Err(EditError::Misaligned {
                got: self.rate.len().min(self.token_dist.len()),
                want: self.gate.len(),
            });
        }
        for &g in &self.gate {
            if !(0.0..=1.0).contains(&g) {
                return Err(EditError::Gate(g));
            }
        }
        for &r in &self.rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(EditError::Rate(r));
            }
        }
        for w in &self.token_dist {
            let s: f64 = w.iter().sum();
            if w.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(EditError::Distribution(format!("mass {s}")));
            }
        }
        Ok(())
    }

    pub fn aligned_with(&self, seq: &TokenSequence) -> Result<(), EditError> {
        if self.len() != seq.len() {
            return Err(EditError::Misaligned {
                got: self.len(),
                want: seq.len(),
            });
        }
        Ok(())
    }
}
