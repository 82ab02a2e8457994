//! Parameter storage shared by every layer of a [`ModelGraph`](super::ModelGraph).

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{KernelRef, KernelShape};

/// A learnable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        let len = value.len();
        debug_assert_eq!(len, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![0.0; len],
            adam_m: vec![0.0; len],
            adam_v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub(crate) fn add_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.grad.len(), "{}", self.name);
        for (a, b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Non-learned state saved with the model (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(pub(crate) usize);

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Truncated normal with variance `2 / fan_in`.
    He { fan_in: usize },
}

/// Ordered table of every parameter and buffer in a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    /// Registers a parameter. Random draws come from a stream keyed by the
    /// parameter's registration index, so one tensor's init never shifts another's.
    pub fn register(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamId {
        let len = shape.iter().product();
        let index = self.params.len();
        let value = match init {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::He { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let mut r = rng::stream(self.seed, Stream::Init, index as u64);
                (0..len).map(|_| std * rng::truncated_normal(&mut r)).collect()
            }
        };
        self.params.push(Parameter::new(name, shape, value));
        ParamId(index)
    }

    pub fn register_buffer(&mut self, name: impl Into<String>, value: Vec<f64>) -> BufferId {
        self.buffers.push(Buffer {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &[f64] {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Vec<f64> {
        &mut self.buffers[id.0].value
    }

    pub fn add_grad(&mut self, id: ParamId, g: &[f64]) {
        self.params[id.0].add_grad(g);
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut [Buffer] {
        &mut self.buffers
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn total(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn find(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Borrowed kernel from a `(weight, bias)` pair.
    pub fn kernel(&self, shape: KernelShape, weight: ParamId, bias: ParamId) -> Result<KernelRef<'_>> {
        KernelRef::new(shape, self.value(weight), self.value(bias))
    }
}

/// Fills `out` with a dropout keep-mask already scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask<R: Rng>(rng: &mut R, rate: f64, out: &mut [f64]) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let scale = 1.0 / (1.0 - rate);
    for m in out.iter_mut() {
        *m = if rng.gen::<f64>() < rate { 0.0 } else { scale };
    }
    Ok(())
}
