//! Browser bindings for three small views of the training pipeline: the
//! confidence-to-weight curve, the running confidence statistics, and
//! pseudo-labelling of a freshly generated dataset.

use rand_distr::Beta;
use serde::Serialize;
use ssctl::data::{generate, SyntheticConfig};
use ssctl::isct::{partition, pseudo_label, train_classifier, ClassifierConfig, GaussianWeightState};
use ssctl::numeric::Rng;
use ssctl::{Error, Result};
use wasm_bindgen::prelude::*;

/// Weight at `points` evenly spaced confidences in `[0, 1]`.
#[wasm_bindgen]
pub fn weight_curve(mu: f64, sigma: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| ssctl::isct::gaussian_weight(i as f64 / (n - 1) as f64, mu, sigma.max(ssctl::isct::SIGMA_FLOOR)))
        .collect()
}

fn trajectory(
    n_domains: usize,
    momentum: f64,
    mean: f64,
    variance: f64,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(mean > 0.0 && mean < 1.0 && variance > 0.0 && variance < mean * (1.0 - mean)) {
        return Err(Error::config(
            "variance",
            "a confidence stream needs 0 < mean < 1 and 0 < variance < mean(1 - mean)",
        ));
    }
    let k = mean * (1.0 - mean) / variance - 1.0;
    let beta = Beta::new(mean * k, (1.0 - mean) * k).map_err(|e| Error::config("variance", e.to_string()))?;
    let mut state = GaussianWeightState::new(n_domains, momentum)?;
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(2 * (steps + 1));
    out.extend([state.mu, state.sigma]);
    for _ in 0..steps {
        let c: Vec<f64> = (0..batch.max(1)).map(|_| rng.sample(&beta)).collect();
        state.ema_update(&c)?;
        out.extend([state.mu, state.sigma]);
    }
    Ok(out)
}

/// `[mu_0, sigma_0, mu_1, sigma_1, ...]` while tracking a Beta-distributed confidence stream.
#[wasm_bindgen]
pub fn ema_trajectory(
    n_domains: usize,
    momentum: f64,
    mean: f64,
    variance: f64,
    steps: usize,
    batch: usize,
    seed: u64,
) -> std::result::Result<Vec<f64>, JsError> {
    trajectory(n_domains, momentum, mean, variance, steps, batch, seed).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Debug, Serialize)]
struct PseudoSummary {
    rows: usize,
    dominant_rows: usize,
    classifier_accuracy: f64,
    /// Pseudo-labelled rows per non-dominant domain, starting at domain 1.
    per_domain: Vec<usize>,
    /// Confidence histogram over `[0, 1]`.
    confidence_hist: Vec<usize>,
    /// Mean weight of the rows in each confidence bin under the initial running statistics.
    weight_by_bin: Vec<Option<f64>>,
    mu: f64,
}

fn summarise(seed: u64, n_samples: usize, separable: bool, bins: usize) -> Result<PseudoSummary> {
    let base = if separable {
        SyntheticConfig::separable()
    } else {
        SyntheticConfig::six_domain()
    };
    let ds = generate(&SyntheticConfig {
        seed,
        n_samples,
        ..base
    })?;
    let (x_d, x_o) = partition(&ds);
    let cfg = ClassifierConfig {
        hidden: vec![16, 8],
        epochs: 3,
        learning_rate: 3e-3,
        seed,
        ..ClassifierConfig::default()
    };
    let (clf, report) = train_classifier(&ds, &x_o, &cfg)?;
    let state = GaussianWeightState::new(ds.schema.n_domains(), 0.999)?;
    let recs = pseudo_label(&clf, &ds, &x_d, &state)?;
    let bins = bins.max(1);
    let mut per_domain = vec![0; ds.schema.n_domains() - 1];
    let mut hist = vec![0usize; bins];
    let mut wsum = vec![0.0; bins];
    for r in &recs {
        per_domain[r.pseudo_domain - 1] += 1;
        let b = ((r.confidence * bins as f64) as usize).min(bins - 1);
        hist[b] += 1;
        wsum[b] += r.weight;
    }
    Ok(PseudoSummary {
        rows: ds.len(),
        dominant_rows: x_d.len(),
        classifier_accuracy: report.accuracy,
        per_domain,
        weight_by_bin: hist.iter().zip(&wsum).map(|(&n, &w)| (n > 0).then(|| w / n as f64)).collect(),
        confidence_hist: hist,
        mu: state.mu,
    })
}

/// Generates a dataset, trains the domain classifier and pseudo-labels the
/// dominant rows. Returns a JSON summary.
#[wasm_bindgen]
pub fn pseudo_label_summary(
    seed: u64,
    n_samples: usize,
    separable: bool,
    bins: usize,
) -> std::result::Result<String, JsError> {
    let s = summarise(seed, n_samples, separable, bins).map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&s).map_err(|e| JsError::new(&e.to_string()))
}
