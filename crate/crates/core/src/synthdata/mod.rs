//! Synthetic paired data: attribute triples encoded as a continuous vector
//! and as a one-line caption, plus an exact nearest-prototype decoder.
//!
//! Each attribute owns a block of coordinates. Its values are unit vectors
//! in that block, spread apart by deterministic repulsion from a fixed seed.

mod io;
mod vocab;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::editflow::{EditError, SeqSpec, TokenSequence};
use crate::rng::stream;

pub use io::{dataset_sha256, read_dataset, write_dataset, DATASET_MAGIC};
pub use vocab::{make_vqa_pair, vqa_pair_for, vqa_prompt, Question, Vocab, VqaPair, EOS_WORD};

const PROTOTYPE_SEED: u64 = 0x7072_6f74;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("invalid attribute spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Indices into the colour, shape and position lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Attrs {
    pub color: usize,
    pub shape: usize,
    pub position: usize,
}

impl Attrs {
    pub fn get(&self, q: Question) -> usize {
        match q {
            Question::Color => self.color,
            Question::Shape => self.shape,
            Question::Position => self.position,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub colors: Vec<String>,
    pub shapes: Vec<String>,
    pub positions: Vec<String>,
    /// Coordinates given to colour, shape and position.
    pub block_dims: [usize; 3],
    pub jitter_sigma: f64,
}

impl Default for AttributeSpec {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        let mut spec = Self {
            colors: own(&["red", "green", "blue", "yellow"]),
            shapes: own(&["circle", "square", "triangle"]),
            positions: own(&["left", "right", "top", "bottom"]),
            block_dims: [3, 2, 3],
            jitter_sigma: 0.0,
        };
        spec.jitter_sigma = 0.05 * spec.prototypes().min_gap();
        spec
    }
}

impl AttributeSpec {
    pub fn d(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn lists(&self) -> [&[String]; 3] {
        [&self.colors, &self.shapes, &self.positions]
    }

    pub fn combinations(&self) -> usize {
        self.colors.len() * self.shapes.len() * self.positions.len()
    }

    pub fn prototypes(&self) -> Prototypes {
        Prototypes::build(self)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.lists().iter().any(|l| l.is_empty()) {
            return Err(DataError::Spec("attribute lists must be nonempty".into()));
        }
        if self.block_dims.contains(&0) {
            return Err(DataError::Spec("block dimensions must be positive".into()));
        }
        let gap = self.prototypes().min_gap();
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma < 0.5 * gap) {
            return Err(DataError::Spec(format!(
                "jitter_sigma {} must be in [0, {})",
                self.jitter_sigma,
                0.5 * gap
            )));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self)
    }
}

/// Unit-vector codes per attribute value, one block per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    offsets: [usize; 3],
    blocks: [Vec<Vec<f64>>; 3],
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn spread(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(PROTOTYPE_SEED, seed);
    let mut pts: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            normalize(&mut v);
            v
        })
        .collect();
    if dim == 1 {
        // Only two well-separated points exist on the line.
        for (i, p) in pts.iter_mut().enumerate() {
            p[0] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        return pts;
    }
    for _ in 0..2000 {
        let mut next = pts.clone();
        for i in 0..count {
            for j in 0..count {
                if i == j {
                    continue;
                }
                let diff: Vec<f64> = pts[i].iter().zip(&pts[j]).map(|(a, b)| a - b).collect();
                let d2 = diff.iter().map(|x| x * x).sum::<f64>().max(1e-9);
                for (n, dv) in next[i].iter_mut().zip(&diff) {
                    *n += 0.05 * dv / d2;
                }
            }
            normalize(&mut next[i]);
        }
        pts = next;
    }
    pts
}

impl Prototypes {
    fn build(spec: &AttributeSpec) -> Self {
        let [a, b, _] = spec.block_dims;
        let lists = spec.lists();
        Self {
            offsets: [0, a, a + b],
            blocks: [0, 1, 2].map(|k| spread(lists[k].len(), spec.block_dims[k], k as u64)),
        }
    }

    pub fn value(&self, block: usize, index: usize) -> &[f64] {
        &self.blocks[block][index]
    }

    pub fn encode(&self, attrs: &Attrs) -> Vec<f64> {
        let mut x = Vec::new();
        for (k, idx) in [attrs.color, attrs.shape, attrs.position].into_iter().enumerate() {
            x.extend_from_slice(&self.blocks[k][idx]);
        }
        x
    }

    /// Smallest distance between two values of the same attribute.
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for block in &self.blocks {
            for i in 0..block.len() {
                for j in i + 1..block.len() {
                    gap = gap.min(dist(&block[i], &block[j]));
                }
            }
        }
        gap
    }

    /// Nearest prototype per block; ties go to the lower index.
    pub fn decode(&self, x: &[f64]) -> Attrs {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let dim = self.blocks[k][0].len();
            let part = &x[self.offsets[k]..self.offsets[k] + dim];
            let mut best = (f64::INFINITY, 0);
            for (i, p) in self.blocks[k].iter().enumerate() {
                let d = dist(part, p);
                if d < best.0 {
                    best = (d, i);
                }
            }
            idx[k] = best.1;
        }
        Attrs {
            color: idx[0],
            shape: idx[1],
            position: idx[2],
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub x: Vec<f64>,
    pub y: TokenSequence,
    pub attrs: Attrs,
}

/// Everything needed to generate, tokenize and judge samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: AttributeSpec,
    pub protos: Prototypes,
    pub vocab: Vocab,
}

impl Dataset {
    pub fn new(spec: AttributeSpec) -> Result<Self, DataError> {
        spec.validate()?;
        Ok(Self {
            protos: spec.prototypes(),
            vocab: spec.vocab(),
            spec,
        })
    }

    pub fn seq_spec(&self, max_len: usize) -> SeqSpec {
        self.vocab.seq_spec(max_len)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> JointSample {
        let attrs = Attrs {
            color: rng.random_range(0..self.spec.colors.len()),
            shape: rng.random_range(0..self.spec.shapes.len()),
            position: rng.random_range(0..self.spec.positions.len()),
        };
        self.sample_with(attrs, rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, attrs: Attrs, rng: &mut R) -> JointSample {
        let mut x = self.protos.encode(&attrs);
        if self.spec.jitter_sigma > 0.0 {
            for v in &mut x {
                *v += self.spec.jitter_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        JointSample {
            x,
            y: self.vocab.caption(&attrs),
            attrs,
        }
    }

    /// `count` samples; sample `i` draws from its own stream `(seed, i)`.
    pub fn generate(&self, count: usize, seed: u64) -> Vec<JointSample> {
        (0..count)
            .map(|i| self.sample(&mut stream(seed, i as u64)))
            .collect()
    }

    pub fn oracle_decode(&self, x: &[f64]) -> Attrs {
        self.protos.decode(x)
    }

    /// Whether the caption parses and names the attributes decoded from `x`.
    pub fn consistency(&self, x: &[f64], y: &TokenSequence) -> bool {
        self.vocab
            .parse_caption(y)
            .is_some_and(|a| a == self.oracle_decode(x))
    }
}

/// Shorthand for [`Dataset::generate`].
pub fn generate(spec: &AttributeSpec, count: usize, seed: u64) -> Result<Vec<JointSample>, DataError> {
    Ok(Dataset::new(spec.clone())?.generate(count, seed))
}

/// Shorthand for [`Prototypes::decode`].
pub fn oracle_decode(x: &[f64], spec: &AttributeSpec) -> Attrs {
    spec.prototypes().decode(x)
}
