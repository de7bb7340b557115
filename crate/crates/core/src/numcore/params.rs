use std::collections::HashMap;
use std::fmt;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{AcgError, Result};

/// Component tag carried by every trainable tensor; staged training freezes
/// parameters by tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Embedding,
    Encoder,
    QueryEncoder,
    Attention,
    Decoder,
    Generator,
    Copier,
    Switch,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Embedding,
        Component::Encoder,
        Component::QueryEncoder,
        Component::Attention,
        Component::Decoder,
        Component::Generator,
        Component::Copier,
        Component::Switch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Embedding => "embedding",
            Component::Encoder => "encoder",
            Component::QueryEncoder => "query_encoder",
            Component::Attention => "attention",
            Component::Decoder => "decoder",
            Component::Generator => "generator",
            Component::Copier => "copier",
            Component::Switch => "switch",
        }
    }

    pub fn parse(s: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| c.as_str() == s)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Small set of component tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ComponentSet(u8);

impl ComponentSet {
    pub const EMPTY: ComponentSet = ComponentSet(0);

    pub fn of(components: &[Component]) -> Self {
        ComponentSet(components.iter().fold(0, |acc, c| acc | c.bit()))
    }

    pub fn contains(self, c: Component) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn insert(&mut self, c: Component) {
        self.0 |= c.bit();
    }

    pub fn iter(self) -> impl Iterator<Item = Component> {
        Component::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tag: Component,
    pub value: Tensor,
    pub grad: Tensor,
}

/// All trainable tensors of a model, each with a parallel gradient buffer.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tag: Component, value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(AcgError::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        let id = self.entries.len();
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tag,
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add_init<R: Rng>(
        &mut self,
        name: &str,
        tag: Component,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        if init == Init::Xavier {
            let (fan_out, fan_in) = if shape.len() >= 2 {
                (shape[0], t.cols())
            } else {
                (1, shape[0])
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        self.add(name, tag, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn tag(&self, id: ParamId) -> Component {
        self.entries[id.0].tag
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Overwrites the gradient buffers with `grads`.
    pub fn set_grads(&mut self, grads: &Gradients) -> Result<()> {
        if grads.grads.len() != self.entries.len() {
            return Err(AcgError::MissingGradients(format!(
                "expected {} gradient blocks, got {}",
                self.entries.len(),
                grads.grads.len()
            )));
        }
        for (e, g) in self.entries.iter_mut().zip(&grads.grads) {
            if g.len() != e.value.len() {
                return Err(AcgError::dim(format!("gradient of {}", e.name), e.value.len(), g.len()));
            }
            e.grad.data_mut().copy_from_slice(g);
        }
        Ok(())
    }
}

/// Gradient blocks aligned with a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Gradients {
            grads: store.entries.iter().map(|e| vec![0.0; e.value.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm does not exceed `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}
