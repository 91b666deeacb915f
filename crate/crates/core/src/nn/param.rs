use std::collections::HashMap;

use rand::RngCore;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`]. Two layers holding the same id share storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Accumulated gradient; buffers keep an untouched zero tensor here.
    pub grad: Tensor<T>,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Every named tensor of a network: learnable parameters and state buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T = f32> {
    entries: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn insert(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.entries.len());
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Param {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor<T>) -> Result<()> {
        self.entries[id.0].grad.add_assign(g)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "infer" => Ok(Mode::Infer),
            other => Err(Error::Config(format!("invalid mode {other:?} (expected train|infer)"))),
        }
    }
}

/// Per-call execution context: mode and the randomness source for dropout.
pub struct Ctx<'a> {
    pub mode: Mode,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> Ctx<'a> {
    pub fn new(mode: Mode, rng: &'a mut dyn RngCore) -> Self {
        Self { mode, rng }
    }
}

/// A differentiable stage. `forward` caches what `backward` needs;
/// `backward` adds parameter gradients into the store and returns dL/dx.
pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, store: &mut ParamStore<T>, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>>;

    fn backward(&mut self, store: &mut ParamStore<T>, dy: &Tensor<T>) -> Result<Tensor<T>>;

    /// Trainable parameters this layer reads, in a fixed order.
    fn params(&self) -> Vec<ParamId> {
        Vec::new()
    }

    fn kind(&self) -> LayerKind;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3d,
    MaxPool3d,
    BatchNorm,
    Relu,
    Dropout,
    Dense,
    Flatten,
}

pub(crate) fn missing_cache(layer: &str) -> Error {
    Error::Precondition(format!("{layer}: backward called before a train-mode forward"))
}
