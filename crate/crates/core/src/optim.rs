//! SGD with momentum and Adam, updating a [`ParameterSet`] in place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Momentum buffer (SGD) or first moment (Adam), one per parameter.
    pub first: Vec<Vec<f64>>,
    /// Second moment (Adam only; empty vectors for SGD).
    pub second: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ParameterSet) -> Self {
        let first: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => first.clone(),
            OptimizerKind::SgdMomentum { .. } => params.iter().map(|_| Vec::new()).collect(),
        };
        Self {
            kind,
            first,
            second,
            step_count: 0,
        }
    }

    fn check_slots(&self, params: &ParameterSet, adam: bool) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(Error::dim("optimizer", "parameters", params.len(), self.first.len()));
        }
        for (i, p) in params.iter().enumerate() {
            if self.first[i].len() != p.value.len() {
                return Err(Error::dim("optimizer", p.name.clone(), p.value.len(), self.first[i].len()));
            }
            if adam && self.second[i].len() != p.value.len() {
                return Err(Error::dim("optimizer", p.name.clone(), p.value.len(), self.second[i].len()));
            }
        }
        Ok(())
    }

    /// Dispatches to [`sgd_update`] or [`adam_update`] based on `kind`.
    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) -> Result<()> {
        match self.kind {
            OptimizerKind::SgdMomentum { .. } => sgd_update(params, self, lr),
            OptimizerKind::Adam { .. } => adam_update(params, self, lr),
        }
    }
}

/// `v ← μ·v + g`, `w ← w − lr·v`.
pub fn sgd_update(params: &mut ParameterSet, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let OptimizerKind::SgdMomentum { momentum } = state.kind else {
        return Err(Error::config("sgd_update called with a non-SGD optimizer state"));
    };
    state.check_slots(params, false)?;
    for (p, v) in params.iter_mut().zip(&mut state.first) {
        for ((w, &g), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(v.iter_mut()) {
            *vi = momentum * *vi + g;
            *w -= lr * *vi;
        }
    }
    state.step_count += 1;
    Ok(())
}

/// Bias-corrected Adam step.
pub fn adam_update(params: &mut ParameterSet, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let OptimizerKind::Adam { beta1, beta2, epsilon } = state.kind else {
        return Err(Error::config("adam_update called with a non-Adam optimizer state"));
    };
    state.check_slots(params, true)?;
    let t = state.step_count + 1;
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grads = p.grad.data();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    state.step_count = t;
    Ok(())
}
