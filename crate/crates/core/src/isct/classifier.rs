use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{batch_indices, Batch, Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::model::{DropoutCtx, Mlp, MlpTrace};
use crate::numeric::ops::softmax_rows;
use crate::numeric::{Embedding, Module, Parameter, Rng, Tensor};
use crate::train::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub focal_gamma: f64,
    /// Fraction of each class held out for the accuracy report.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32],
            epochs: 5,
            batch_size: 256,
            learning_rate: 1e-3,
            focal_gamma: 2.0,
            holdout: 0.2,
            seed: 1,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::config(
                "classifier.hidden",
                "widths must be positive",
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "classifier.epochs/batch_size",
                "must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "classifier.learning_rate",
                "must be positive",
            ));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::config(
                "classifier.focal_gamma",
                "must be non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::config("classifier.holdout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Predicts which non-dominant domain a row belongs to. Class `j` is domain `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    pub schema: FeatureSchema,
    pub embeddings: Vec<Embedding>,
    pub mlp: Mlp,
    frozen: bool,
}

impl DomainClassifier {
    pub fn new(schema: &FeatureSchema, hidden: &[usize], seed: u64) -> Result<Self> {
        schema.validate()?;
        let n = schema.n_domains();
        if n < 3 {
            return Err(Error::config(
                "n_domains",
                "the domain classifier needs at least two non-dominant domains",
            ));
        }
        let d = schema.embedding_dim;
        let embeddings = schema
            .feature_fields()
            .map(|f| Embedding::new("clf.emb", &f.name, f.vocab, d, seed))
            .collect();
        let mut widths = hidden.to_vec();
        widths.push(n - 1);
        let mlp = Mlp::new(
            "clf.mlp",
            d * schema.n_features(),
            &widths,
            false,
            false,
            seed,
        );
        Ok(Self {
            schema: schema.clone(),
            embeddings,
            mlp,
            frozen: false,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_domains() - 1
    }

    pub fn hidden(&self) -> Vec<usize> {
        let w = self.mlp.widths();
        w[..w.len() - 1].to_vec()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn inputs(&self, batch: &Batch) -> Result<Tensor> {
        let parts: Vec<Tensor> = self
            .embeddings
            .iter()
            .zip(&batch.ids)
            .map(|(e, ids)| e.forward(ids))
            .collect::<Result<_>>()?;
        Tensor::concat_cols(&parts.iter().collect::<Vec<_>>())
    }

    fn forward(&self, batch: &Batch) -> Result<MlpTrace> {
        if batch.ids.len() != self.embeddings.len() {
            return Err(Error::shape(
                "classifier input",
                &[self.embeddings.len()],
                &[batch.ids.len()],
            ));
        }
        let x = self.inputs(batch)?;
        self.mlp.forward(&x, None, &mut DropoutCtx::off())
    }

    /// Class distribution per row, `[B × (N−1)]`.
    pub fn predict_proba(&self, batch: &Batch) -> Result<Tensor> {
        softmax_rows(&self.forward(batch)?.output)
    }

    /// Pre-softmax scores, `[B × (N−1)]`.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        Ok(self.forward(batch)?.output)
    }

    /// One focal-loss gradient step on rows of non-dominant domains. Returns the mean loss.
    fn train_step(
        &mut self,
        batch: &Batch,
        alpha: &[f64],
        gamma: f64,
        adam: &mut Adam,
    ) -> Result<f64> {
        if self.frozen {
            return Err(Error::Validation("classifier is frozen".into()));
        }
        let trace = self.forward(batch)?;
        let probs = softmax_rows(&trace.output)?;
        let b = batch.len() as f64;
        let mut dlogits = Tensor::zeros(probs.shape());
        let mut loss = 0.0;
        for (r, &domain) in batch.domains.iter().enumerate() {
            let k = domain.checked_sub(1).ok_or_else(|| {
                Error::Validation("dominant-domain row in classifier batch".into())
            })?;
            loss += focal_loss(probs.row(r), k, gamma, alpha[k]);
            let g = focal_loss_logit_grad(probs.row(r), k, gamma, alpha[k]);
            for (o, v) in dlogits.row_mut(r).iter_mut().zip(g) {
                *o = v / b;
            }
        }
        self.zero_grad();
        let (dx, _) = self.mlp.backward(&trace, &dlogits)?;
        let d = self.schema.embedding_dim;
        let parts = dx.split_cols(&vec![d; self.embeddings.len()])?;
        for ((e, ids), g) in self.embeddings.iter_mut().zip(&batch.ids).zip(&parts) {
            e.backward(ids, g)?;
        }
        adam.step(self.parameters_mut())?;
        Ok(loss / b)
    }

    /// Hex SHA-256 over parameter names and values.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.parameters() {
            h.update(p.name.as_bytes());
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Module for DomainClassifier {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self
            .embeddings
            .iter()
            .flat_map(|e| e.parameters())
            .collect();
        p.extend(self.mlp.parameters());
        p
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self
            .embeddings
            .iter_mut()
            .flat_map(|e| e.parameters_mut())
            .collect();
        p.extend(self.mlp.parameters_mut());
        p
    }
}

/// `−α (1−p_k)^γ ln p_k`, with `p_k` clamped at 1e-12.
pub fn focal_loss(p: &[f64], k: usize, gamma: f64, alpha: f64) -> f64 {
    let pk = p[k].max(1e-12);
    -alpha * (1.0 - pk).powf(gamma) * pk.ln()
}

/// Gradient of [`focal_loss`] w.r.t. the softmax logits that produced `p`.
pub fn focal_loss_logit_grad(p: &[f64], k: usize, gamma: f64, alpha: f64) -> Vec<f64> {
    let pk = p[k].max(1e-12);
    let q = 1.0 - pk;
    // dL/dp_k · p_k
    let curvature = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * pk * pk.ln()
    };
    let u = alpha * (curvature - q.powf(gamma));
    p.iter()
        .enumerate()
        .map(|(j, &pj)| u * (f64::from(u8::from(j == k)) - pj))
        .collect()
}

/// `α_k ∝ 1/freq_k`, normalised to sum 1. Absent classes get 0.
pub fn inverse_frequency_alpha(counts: &[usize]) -> Vec<f64> {
    let inv: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
        .collect();
    let total: f64 = inv.iter().sum();
    inv.iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainAccuracy {
    pub domain: usize,
    pub n: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// Held-out accuracy over all classes (training rows if nothing was held out).
    pub accuracy: f64,
    pub per_domain: Vec<DomainAccuracy>,
    pub holdout_rows: usize,
    pub epoch_losses: Vec<f64>,
    pub param_hash: String,
}

fn holdout_split(
    dataset: &Dataset,
    rows: &[usize],
    n: usize,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class = vec![Vec::new(); n];
    for &i in rows {
        by_class[dataset.rows[i].domain].push(i);
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (k, mut group) in by_class.into_iter().enumerate() {
        Rng::substream(seed, "clf.holdout", k as u64).shuffle(&mut group);
        let nh = if group.len() < 2 {
            0
        } else {
            ((group.len() as f64 * fraction) as usize).min(group.len() - 1)
        };
        held.extend_from_slice(&group[..nh]);
        train.extend_from_slice(&group[nh..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Accuracy of `clf` on `rows`, overall and per true domain.
pub(crate) fn accuracy(
    clf: &DomainClassifier,
    dataset: &Dataset,
    rows: &[usize],
) -> Result<(f64, Vec<DomainAccuracy>)> {
    let n = dataset.schema.n_domains();
    let mut hits = vec![0usize; n];
    let mut seen = vec![0usize; n];
    for chunk in rows.chunks(4096) {
        let batch = Batch::from_rows(dataset, chunk);
        let probs = clf.predict_proba(&batch)?;
        for (r, &d) in batch.domains.iter().enumerate() {
            let (k, _) = super::argmax_confidence(probs.row(r));
            seen[d] += 1;
            hits[d] += usize::from(k == d);
        }
    }
    let total: usize = seen.iter().sum();
    let overall = if total == 0 {
        0.0
    } else {
        hits.iter().sum::<usize>() as f64 / total as f64
    };
    let per_domain = (1..n)
        .map(|d| DomainAccuracy {
            domain: d,
            n: seen[d],
            accuracy: (seen[d] > 0).then(|| hits[d] as f64 / seen[d] as f64),
        })
        .collect();
    Ok((overall, per_domain))
}

/// Trains a classifier on the non-dominant rows `x_o` of `dataset` and freezes it.
pub fn train_classifier(
    dataset: &Dataset,
    x_o: &[usize],
    config: &ClassifierConfig,
) -> Result<(DomainClassifier, ClassifierReport)> {
    config.validate()?;
    let n = dataset.schema.n_domains();
    if let Some(&i) = x_o.iter().find(|&&i| dataset.rows[i].domain == 0) {
        return Err(Error::Validation(format!(
            "row {i} is from the dominant domain"
        )));
    }
    let mut present: Vec<usize> = x_o.iter().map(|&i| dataset.rows[i].domain).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::config(
            "data",
            format!(
                "classifier needs rows from at least two non-dominant domains, found {}",
                present.len()
            ),
        ));
    }
    let mut clf = DomainClassifier::new(&dataset.schema, &config.hidden, config.seed)?;
    let (train, held) = holdout_split(dataset, x_o, n, config.holdout, config.seed);
    let mut counts = vec![0usize; n - 1];
    for &i in &train {
        counts[dataset.rows[i].domain - 1] += 1;
    }
    let alpha = inverse_frequency_alpha(&counts);
    let mut adam = Adam::new(config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let shuffle = Rng::derive_seed(config.seed, "clf.shuffle", epoch as u64);
        let mut sum = 0.0;
        let mut count = 0usize;
        for idx in batch_indices(&train, config.batch_size, shuffle)? {
            let batch = Batch::from_rows(dataset, &idx);
            let loss = clf.train_step(&batch, &alpha, config.focal_gamma, &mut adam)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "classifier loss {loss} at epoch {epoch}"
                )));
            }
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        let mean = sum / count.max(1) as f64;
        log::info!("classifier epoch {epoch}: focal loss {mean:.6}");
        epoch_losses.push(mean);
    }
    clf.freeze();
    let eval_rows = if held.is_empty() { &train } else { &held };
    let (acc, per_domain) = accuracy(&clf, dataset, eval_rows)?;
    let report = ClassifierReport {
        accuracy: acc,
        per_domain,
        holdout_rows: held.len(),
        epoch_losses,
        param_hash: clf.param_hash(),
    };
    Ok((clf, report))
}
