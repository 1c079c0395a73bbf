use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvKernel,
    DenseWeight,
    Bias,
    BnGamma,
    BnBeta,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] = [
        ParamKind::ConvKernel,
        ParamKind::DenseWeight,
        ParamKind::Bias,
        ParamKind::BnGamma,
        ParamKind::BnBeta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::ConvKernel => "conv_kernel",
            ParamKind::DenseWeight => "dense_weight",
            ParamKind::Bias => "bias",
            ParamKind::BnGamma => "bn_gamma",
            ParamKind::BnBeta => "bn_beta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters in definition order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Parameter { name, kind, value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.entries.iter_mut()
    }

    pub fn entries(&self) -> &[Parameter] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|p| p.name.as_str()).collect()
    }

    /// Total element count across all entries.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    /// Adds `grad` into the gradient buffer of `name`.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        p.grad.add_assign(grad)
    }
}
