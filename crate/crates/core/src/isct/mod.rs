//! Pseudo-domain augmentation of the sparse domains.
//!
//! A classifier trained on non-dominant rows assigns each dominant-domain
//! row a pseudo domain and a confidence; confidences are turned into sample
//! weights by a Gaussian truncated at the running mean confidence.

mod classifier;
mod pseudo;

pub use classifier::{
    focal_loss, focal_loss_logit_grad, inverse_frequency_alpha, train_classifier, ClassifierConfig,
    ClassifierReport, DomainClassifier,
};
pub use pseudo::{
    argmax_confidence, pseudo_label, pseudo_label_from_probs, read_pseudo, write_pseudo,
    PseudoRecord,
};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Splits row indices into the dominant domain (0) and the rest.
pub fn partition(dataset: &Dataset) -> (Vec<usize>, Vec<usize>) {
    (0..dataset.len()).partition(|&i| dataset.rows[i].domain == 0)
}

/// `exp(−(c−μ)²/2σ²)` below the mean, 1 at or above it.
pub fn gaussian_weight(c: f64, mu: f64, sigma: f64) -> f64 {
    if c >= mu {
        1.0
    } else {
        let d = c - mu;
        (-(d * d) / (2.0 * sigma * sigma)).exp()
    }
}

pub const SIGMA_FLOOR: f64 = 1e-4;

/// Running mean and standard deviation of pseudo-label confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianWeightState {
    pub mu: f64,
    pub sigma: f64,
    pub momentum: f64,
    pub step: u64,
}

impl GaussianWeightState {
    /// Starts from the uniform-confidence prior `1/(N−1)` with unit spread.
    pub fn new(n_domains: usize, momentum: f64) -> Result<Self> {
        if n_domains < 2 {
            return Err(Error::config(
                "n_domains",
                "need at least one non-dominant domain",
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(
                "ema_momentum",
                format!("must lie in [0, 1), got {momentum}"),
            ));
        }
        Ok(Self {
            mu: 1.0 / (n_domains - 1) as f64,
            sigma: 1.0,
            momentum,
            step: 0,
        })
    }

    pub fn weight(&self, c: f64) -> f64 {
        gaussian_weight(c, self.mu, self.sigma)
    }

    /// Folds one batch of confidences in; variance is the population form.
    pub fn ema_update(&mut self, confidences: &[f64]) -> Result<()> {
        if confidences.is_empty() {
            return Err(Error::Validation(
                "EMA update needs at least one confidence".into(),
            ));
        }
        let n = confidences.len() as f64;
        let mean = confidences.iter().sum::<f64>() / n;
        let var = confidences
            .iter()
            .map(|c| (c - mean) * (c - mean))
            .sum::<f64>()
            / n;
        let m = self.momentum;
        self.mu = m * self.mu + (1.0 - m) * mean;
        let s2 = m * self.sigma * self.sigma + (1.0 - m) * var;
        self.sigma = s2.sqrt().max(SIGMA_FLOOR);
        self.step += 1;
        Ok(())
    }
}

/// `Σ labeled + λ Σ w_j · pseudo_j`.
pub fn total_loss(labeled: &[f64], pseudo: &[f64], weights: &[f64], lambda: f64) -> Result<f64> {
    if pseudo.len() != weights.len() {
        return Err(Error::shape(
            "total_loss",
            &[pseudo.len()],
            &[weights.len()],
        ));
    }
    if !(lambda >= 0.0) {
        return Err(Error::config("lambda", "must be non-negative"));
    }
    let term1: f64 = labeled.iter().sum();
    let term2: f64 = pseudo.iter().zip(weights).map(|(l, w)| l * w).sum();
    Ok(term1 + lambda * term2)
}
