use rand::Rng;

use super::{AttributeSpec, Attrs, DataError, JointSample};
use crate::editflow::{SeqSpec, SpanMask, TokenSequence};

const FUNCTION_WORDS: [&str; 3] = ["a", "at", "the"];
const QUESTION_WORDS: [&str; 5] = ["what", "color", "shape", "position", "?"];
pub const EOS_WORD: &str = "<eos>";
pub const DEFAULT_MAX_LEN: usize = 16;

/// Word list of the grammar. EOS takes the last id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    /// Offsets of the colour, shape and position words.
    attr_base: [usize; 3],
    attr_len: [usize; 3],
    max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Question {
    Color,
    Shape,
    Position,
}

impl Question {
    pub const ALL: [Question; 3] = [Question::Color, Question::Shape, Question::Position];

    pub fn word(self) -> &'static str {
        match self {
            Question::Color => "color",
            Question::Shape => "shape",
            Question::Position => "position",
        }
    }

    fn block(self) -> usize {
        match self {
            Question::Color => 0,
            Question::Shape => 1,
            Question::Position => 2,
        }
    }
}

impl Vocab {
    pub(super) fn new(spec: &AttributeSpec) -> Self {
        let mut words: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        let mut attr_base = [0; 3];
        let mut attr_len = [0; 3];
        for (k, list) in spec.lists().into_iter().enumerate() {
            attr_base[k] = words.len();
            attr_len[k] = list.len();
            words.extend(list.iter().cloned());
        }
        words.extend(QUESTION_WORDS.iter().map(|s| s.to_string()));
        words.push(EOS_WORD.to_string());
        Self {
            words,
            attr_base,
            attr_len,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.words.len() - 1
    }

    pub fn seq_spec(&self, max_len: usize) -> SeqSpec {
        SeqSpec {
            vocab_size: self.len(),
            eos: self.eos(),
            max_len,
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Result<usize, DataError> {
        self.words[..self.eos()]
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| DataError::UnknownWord(word.to_string()))
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn attr_token(&self, q: Question, value: usize) -> usize {
        self.attr_base[q.block()] + value
    }

    fn attr_value(&self, block: usize, token: usize) -> Option<usize> {
        let base = self.attr_base[block];
        (token >= base && token < base + self.attr_len[block]).then(|| token - base)
    }

    /// Whitespace-separated words; a trailing `?` is split off its word.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, DataError> {
        let mut ids = Vec::new();
        for raw in text.split_whitespace() {
            match raw.strip_suffix('?') {
                Some(stem) if !stem.is_empty() => {
                    ids.push(self.id(stem)?);
                    ids.push(self.id("?")?);
                }
                _ => ids.push(self.id(raw)?),
            }
        }
        ids.push(self.eos());
        Ok(TokenSequence::new(ids, &self.seq_spec(self.max_len))?)
    }

    pub fn detokenize(&self, y: &TokenSequence) -> String {
        y.body()
            .iter()
            .map(|&t| self.words[t].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// "a <color> <shape> at the <position>".
    pub fn caption(&self, attrs: &Attrs) -> TokenSequence {
        let id = |w: &str| self.id(w).expect("grammar word");
        let toks = vec![
            id("a"),
            self.attr_token(Question::Color, attrs.color),
            self.attr_token(Question::Shape, attrs.shape),
            id("at"),
            id("the"),
            self.attr_token(Question::Position, attrs.position),
            self.eos(),
        ];
        TokenSequence::new(toks, &self.seq_spec(self.max_len)).expect("caption fits")
    }

    pub fn parse_caption(&self, y: &TokenSequence) -> Option<Attrs> {
        let b = y.body();
        if b.len() != 6 {
            return None;
        }
        let id = |w: &str| self.id(w).ok();
        if Some(b[0]) != id("a") || Some(b[3]) != id("at") || Some(b[4]) != id("the") {
            return None;
        }
        Some(Attrs {
            color: self.attr_value(0, b[1])?,
            shape: self.attr_value(1, b[2])?,
            position: self.attr_value(2, b[5])?,
        })
    }

    /// Every caption the grammar can produce.
    pub fn all_captions(&self) -> Vec<(Attrs, TokenSequence)> {
        let mut out = Vec::new();
        for color in 0..self.attr_len[0] {
            for shape in 0..self.attr_len[1] {
                for position in 0..self.attr_len[2] {
                    let a = Attrs {
                        color,
                        shape,
                        position,
                    };
                    out.push((a, self.caption(&a)));
                }
            }
        }
        out
    }
}

/// Question prompt with the answer span left of EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct VqaPair {
    pub prompt: TokenSequence,
    pub question: Question,
    pub target: usize,
    pub span: SpanMask,
}

impl VqaPair {
    /// The prompt with the answer inserted before EOS.
    pub fn answered(&self) -> TokenSequence {
        let mut toks = self.prompt.tokens().to_vec();
        toks.insert(toks.len() - 1, self.target);
        TokenSequence::from_raw(toks)
    }
}

/// "what <attribute> ?".
pub fn vqa_prompt(vocab: &Vocab, q: Question) -> TokenSequence {
    vocab
        .tokenize(&format!("what {} ?", q.word()))
        .expect("question words are in the vocabulary")
}

pub fn vqa_pair_for(vocab: &Vocab, sample: &JointSample, q: Question) -> VqaPair {
    let prompt = vqa_prompt(vocab, q);
    let span = SpanMask::before_eos(prompt.len());
    VqaPair {
        target: vocab.attr_token(q, sample.attrs.get(q)),
        prompt,
        question: q,
        span,
    }
}

pub fn make_vqa_pair<R: Rng + ?Sized>(vocab: &Vocab, sample: &JointSample, rng: &mut R) -> VqaPair {
    let q = Question::ALL[rng.random_range(0..3)];
    vqa_pair_for(vocab, sample, q)
}
