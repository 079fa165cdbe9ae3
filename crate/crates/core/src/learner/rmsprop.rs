use ndarray::{ArrayViewD, ArrayViewMutD, Zip};

use crate::network::NetworkParams;

use super::FreezeMask;

pub const DEFAULT_DECAY: f64 = 0.99;
pub const DEFAULT_EPS: f64 = 1e-8;

/// One RMSProp descent step on a single tensor.
pub fn rmsprop_step(
    mut tensor: ArrayViewMutD<f64>,
    grad: ArrayViewD<f64>,
    mut acc: ArrayViewMutD<f64>,
    lr: f64,
    decay: f64,
    eps: f64,
) {
    Zip::from(&mut tensor)
        .and(&grad)
        .and(&mut acc)
        .for_each(|w, &g, a| {
            *a = decay * *a + (1.0 - decay) * g * g;
            *w -= lr * g / (a.sqrt() + eps);
        });
}

/// RMSProp with its own second-moment accumulators for every tensor.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    acc: NetworkParams,
}

impl RmsProp {
    pub fn new(params: &NetworkParams, lr: f64, decay: f64, eps: f64) -> Self {
        Self {
            lr,
            decay,
            eps,
            acc: NetworkParams::zeros(&params.shape()),
        }
    }

    pub fn accumulators(&self) -> &NetworkParams {
        &self.acc
    }

    /// Descends along `grads`, leaving frozen tensors and their accumulators untouched.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, freeze: &FreezeMask) {
        let (lr, decay, eps) = (self.lr, self.decay, self.eps);
        let grads = grads.tensors();
        for (((name, w), (_, g)), (_, a)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.into_iter())
            .zip(self.acc.tensors_mut().into_iter())
        {
            if freeze.is_frozen(&name) {
                continue;
            }
            rmsprop_step(w, g, a, lr, decay, eps);
        }
    }
}
