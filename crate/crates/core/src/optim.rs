//! Adam optimizer over the parameter store, plus a gradient accumulator
//! for summing contributions from several graphs (one graph per sample).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Sums per-parameter gradients harvested from one or more graphs.
#[derive(Debug, Default)]
pub struct GradAccum {
    by_param: BTreeMap<usize, Tensor>,
}

impl GradAccum {
    pub fn new() -> GradAccum {
        GradAccum { by_param: BTreeMap::new() }
    }

    pub fn absorb(&mut self, grads: Vec<(usize, Tensor)>) -> Result<()> {
        for (pidx, g) in grads {
            match self.by_param.get_mut(&pidx) {
                Some(acc) => acc.add_scaled(&g, 1.0)?,
                None => {
                    self.by_param.insert(pidx, g);
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn into_vec(self) -> Vec<(usize, Tensor)> {
        self.by_param.into_iter().collect()
    }
}

/// Standard Adam with bias correction. Moment buffers are keyed by
/// parameter index and created on first update, so parameters that never
/// receive a gradient cost nothing and stay untouched.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam { lr, beta1: ADAM_BETA1, beta2: ADAM_BETA2, eps: ADAM_EPS, t: 0, moments: Vec::new() }
    }

    /// Applies one update from accumulated gradients. Gradients for
    /// frozen parameters are a caller bug and rejected. Parameters with
    /// no gradient entry are left exactly as they were.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(usize, Tensor)]) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(CoreError::InvalidArgument { op: "Adam::step", detail: format!("lr {}", self.lr) });
        }
        self.t += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (pidx, g) in grads {
            let id = ParamId(*pidx);
            if !store.is_trainable(id) {
                return Err(CoreError::Parameter {
                    detail: format!("gradient supplied for frozen parameter {:?}", store.name(id)),
                });
            }
            let value = store.value(id);
            if value.shape() != g.shape() {
                return Err(CoreError::ShapeMismatch {
                    op: "Adam::step",
                    detail: format!("{:?}: {:?} vs {:?}", store.name(id), value.shape(), g.shape()),
                });
            }
            let slot = &mut self.moments[*pidx];
            if slot.is_none() {
                *slot = Some((Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            }
            let (m, v) = slot.as_mut().unwrap();
            let mut new_value = vec![0.0; g.len()];
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                new_value[i] = value.data()[i] - self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
            store.set_value(id, Tensor::new(g.shape(), new_value)?)?;
        }
        Ok(())
    }
}
