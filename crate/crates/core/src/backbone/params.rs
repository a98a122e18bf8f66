use rand::Rng;
use rand_distr::StandardNormal;

use crate::ndcore::Tensor;

/// Optimizer/trainability group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// Pretrain-equivalent weights; frozen after the base phase.
    Base,
    /// LoRA factors and the text-time delta pathway.
    Adapter,
    /// Text heads (gate, rate, token identity).
    Head,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Base => "base",
            Group::Adapter => "adapter",
            Group::Head => "head",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "base" => Some(Group::Base),
            "adapter" => Some(Group::Adapter),
            "head" => Some(Group::Head),
            _ => None,
        }
    }
}

pub type ParamId = usize;

/// Named parameter tensors with their groups. Clones are cheap: tensor data
/// is reference counted.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    groups: Vec<Group>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub(crate) fn empty() -> Self {
        Self {
            names: Vec::new(),
            groups: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, group: Group, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.groups.push(group);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub(crate) fn push_normal<R: Rng>(
        &mut self,
        name: &str,
        group: Group,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let v = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        self.push(name, group, Tensor::new(shape.to_vec(), v).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(t.shape(), self.tensors[id].shape(), "shape of {}", self.names[id]);
        self.tensors[id] = t;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.groups[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn ids(&self) -> std::ops::Range<ParamId> {
        0..self.tensors.len()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// `mask[id]` is true for parameters in any of `groups`.
    pub fn mask(&self, groups: &[Group]) -> Vec<bool> {
        self.groups.iter().map(|g| groups.contains(g)).collect()
    }

    pub fn count(&self, groups: &[Group]) -> usize {
        self.ids()
            .filter(|&i| groups.contains(&self.groups[i]))
            .map(|i| self.tensors[i].len())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}
