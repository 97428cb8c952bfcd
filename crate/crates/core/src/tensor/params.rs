use std::collections::HashMap;

use ndarray::ArrayD;

use super::Element;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// Role of a trainable tensor; drives weight-decay selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Convolution, fully-connected and attention weights.
    Weight,
    Bias,
    BnScale,
    BnShift,
    /// Learnable mask multiplied into a normalized adjacency partition.
    EdgeImportance,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayD<F>,
    pub grad: Option<ArrayD<F>>,
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Buffer<F> {
    pub name: String,
    pub value: ArrayD<F>,
}

/// Registry of named parameters and buffers. Names are unique across both.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
    buffers: Vec<Buffer<F>>,
    names: HashMap<String, usize>,
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    fn claim(&mut self, name: &str, slot: usize) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(Error::arg(format!("duplicate parameter name `{name}`")));
        }
        self.names.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: impl Into<String>, kind: ParamKind, value: ArrayD<F>) -> Result<ParamId> {
        let name = name.into();
        let id = self.params.len();
        self.claim(&name, id)?;
        self.params.push(Parameter {
            name,
            kind,
            value,
            grad: None,
        });
        Ok(ParamId(id))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: ArrayD<F>) -> Result<BufferId> {
        let name = name.into();
        let id = self.buffers.len();
        self.claim(&name, id)?;
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(id))
    }

    pub fn param(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &ArrayD<F> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut ArrayD<F> {
        &mut self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<F>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<F>] {
        &mut self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &ArrayD<F>) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => *acc += g,
            None => p.grad = Some(g.clone()),
        }
    }
}
