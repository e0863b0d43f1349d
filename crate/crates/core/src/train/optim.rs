use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{Parameter, Tensor};

/// Bias-corrected Adam. Moments are keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: Vec<&mut Parameter>) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in `{}`",
                p.name
            )));
        }
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for p in params {
            let (m, v) = self.moments.entry(p.name.clone()).or_insert_with(|| {
                (
                    Tensor::zeros(p.value.shape()),
                    Tensor::zeros(p.value.shape()),
                )
            });
            if m.shape() != p.value.shape() {
                return Err(Error::shape("adam moments", m.shape(), p.value.shape()));
            }
            let values = p.value.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &g) in p.grad.data().iter().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * g;
                vd[i] = b2 * vd[i] + (1.0 - b2) * g * g;
                let mhat = md[i] / c1;
                let vhat = vd[i] / c2;
                values[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
