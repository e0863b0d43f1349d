//! Three-stage training: domain classifier, pseudo-labels, then the main
//! model on the combined objective. Also the optimizer, metrics and
//! persistence.

mod checkpoint;
mod metrics;
mod optim;
mod persist;
mod reference;

pub use checkpoint::{ArrayData, Checkpoint, MAGIC};
pub use metrics::{
    auc, bce_grad, bce_loss, read_baseline, read_metrics, rimp, write_baseline, write_metrics_line,
    MetricsRecord,
};
pub use optim::Adam;
pub use persist::{
    classifier_from_checkpoint, classifier_to_checkpoint, model_from_checkpoint,
    model_to_checkpoint, ModelMeta,
};
pub use reference::{parameter_group, reference_gradcheck, reference_model, GroupReport};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, split, Batch, Dataset, FeatureSchema, SplitSpec};
use crate::error::{Error, Result};
use crate::isct::{
    partition, pseudo_label, train_classifier, ClassifierConfig, ClassifierReport,
    DomainClassifier, GaussianWeightState, PseudoRecord,
};
use crate::model::{ForwardTrace, ModelConfig, SddnScope, SsctlModel};
use crate::numeric::{Module, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub delta: f64,
    pub embedding_dim: usize,
    pub expert_widths: Vec<usize>,
    pub n_shared_experts: usize,
    pub gate_hidden: Vec<usize>,
    pub tower_hidden: Vec<usize>,
    pub ema_momentum: f64,
    pub seed: u64,
    /// Pseudo-labelled dominant rows in the objective.
    pub isct: bool,
    /// Per-layer domain scaling of the shared experts.
    pub sddn: bool,
    pub sddn_scope: SddnScope,
    pub batch_norm: bool,
    pub classifier: ClassifierConfig,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-size widths and batch.
    pub fn production() -> Self {
        Self {
            batch_size: 4096,
            expert_widths: vec![256, 128, 64],
            gate_hidden: vec![64],
            tower_hidden: vec![64],
            ..Self::desk()
        }
    }

    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 5,
            dropout: 0.2,
            lambda: 0.7,
            delta: 2.0,
            embedding_dim: 10,
            expert_widths: vec![32, 16],
            n_shared_experts: 2,
            gate_hidden: vec![16],
            tower_hidden: vec![16],
            ema_momentum: 0.999,
            seed: 42,
            isct: true,
            sddn: true,
            sddn_scope: SddnScope::Experts,
            batch_norm: false,
            classifier: ClassifierConfig::default(),
            split: SplitSpec::default(),
        }
    }

    /// Small enough for many seeded runs in a test.
    pub fn tiny() -> Self {
        Self {
            batch_size: 512,
            epochs: 4,
            embedding_dim: 4,
            expert_widths: vec![8, 4],
            gate_hidden: vec![8],
            tower_hidden: vec![8],
            classifier: ClassifierConfig {
                hidden: vec![16, 8],
                epochs: 2,
                batch_size: 512,
                learning_rate: 3e-3,
                ..ClassifierConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "production" => Ok(Self::production()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::config(
                "profile",
                format!("unknown profile `{other}` (production, desk, tiny)"),
            )),
        }
    }

    /// The backbone alone: no pseudo-labels, no domain scaling.
    pub fn backbone(&self) -> Self {
        Self {
            isct: false,
            sddn: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::config("ema_momentum", "must lie in [0, 1)"));
        }
        self.model_config().validate()?;
        self.classifier.validate()?;
        self.split.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embedding_dim: self.embedding_dim,
            expert_widths: self.expert_widths.clone(),
            n_shared_experts: self.n_shared_experts,
            gate_hidden: self.gate_hidden.clone(),
            tower_hidden: self.tower_hidden.clone(),
            delta: self.delta,
            dropout: self.dropout,
            sddn: self.sddn,
            sddn_scope: self.sddn_scope,
            batch_norm: self.batch_norm,
            seed: self.seed,
        }
    }

    fn needs_classifier(&self) -> bool {
        self.isct || self.sddn
    }
}

/// Loss and gradients of the combined objective for one step.
///
/// Term one is the CTR loss of `labeled`; term two the CTR loss of `pseudo`
/// (rows routed to their pseudo domain) weighted by each row's weight and by
/// `lambda`. Both are divided by the size of term one. Gradients accumulate
/// into `model`; the returned traces allow batch-norm statistics to be folded in.
pub fn objective(
    model: &mut SsctlModel,
    labeled: &Batch,
    labeled_soft: Option<&Tensor>,
    pseudo: Option<(&Batch, Option<&Tensor>)>,
    lambda: f64,
    mut rngs: Option<(&mut Rng, &mut Rng)>,
) -> Result<(f64, Vec<ForwardTrace>)> {
    if labeled.is_empty() {
        return Err(Error::Validation("empty labelled batch".into()));
    }
    let n1 = labeled.len() as f64;
    let rng = rngs.as_mut().map(|(a, _)| &mut **a);
    let t = model.forward(labeled, labeled_soft, rng)?;
    let mut loss = 0.0;
    let mut dl = Vec::with_capacity(labeled.len());
    for (&z, &y) in t.logits.iter().zip(&labeled.labels) {
        loss += bce_loss(z, y);
        dl.push(bce_grad(z, y) / n1);
    }
    model.backward(&t, &dl)?;
    let mut traces = vec![t];
    if let Some((pb, psoft)) = pseudo {
        if lambda > 0.0 && !pb.is_empty() {
            let rng = rngs.as_mut().map(|(_, b)| &mut **b);
            let t = model.forward(pb, psoft, rng)?;
            let mut term2 = 0.0;
            let mut dl = Vec::with_capacity(pb.len());
            for ((&z, &y), &w) in t.logits.iter().zip(&pb.labels).zip(&pb.weights) {
                term2 += w * bce_loss(z, y);
                dl.push(lambda * w * bce_grad(z, y) / n1);
            }
            model.backward(&t, &dl)?;
            loss += lambda * term2;
            traces.push(t);
        }
    }
    Ok((loss / n1, traces))
}

/// Per-domain evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEval {
    pub domain: usize,
    pub n: usize,
    pub auc: Option<f64>,
}

/// Predicted click probabilities for `rows`, each routed by its true domain.
pub fn predict(
    model: &SsctlModel,
    dataset: &Dataset,
    rows: &[usize],
    soft: Option<&Tensor>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(4096) {
        let batch = Batch::from_rows(dataset, chunk);
        let p = match (model.config.sddn, soft) {
            (true, Some(s)) => Some(s.gather_rows(chunk)),
            (true, None) => {
                return Err(Error::Validation(
                    "model uses domain scaling but no classifier output was given".into(),
                ))
            }
            (false, _) => None,
        };
        out.extend(model.forward(&batch, p.as_ref(), None)?.predictions);
    }
    Ok(out)
}

/// AUC per domain over `rows`; `None` where a domain has no rows or a single class.
pub fn evaluate(
    model: &SsctlModel,
    dataset: &Dataset,
    rows: &[usize],
    soft: Option<&Tensor>,
) -> Result<Vec<DomainEval>> {
    let preds = predict(model, dataset, rows, soft)?;
    let n = dataset.schema.n_domains();
    let mut scores = vec![Vec::new(); n];
    let mut labels = vec![Vec::new(); n];
    for (&i, &p) in rows.iter().zip(&preds) {
        let r = &dataset.rows[i];
        scores[r.domain].push(p);
        labels[r.domain].push(f64::from(r.label));
    }
    (0..n)
        .map(|d| {
            let a = match auc(&scores[d], &labels[d]) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(msg)) => {
                    warn!("domain {d}: {msg}");
                    None
                }
                Err(e) => return Err(e),
            };
            Ok(DomainEval {
                domain: d,
                n: scores[d].len(),
                auc: a,
            })
        })
        .collect()
}

/// Mean AUC over the non-dominant domains that have one (domain 0 if it is the only domain).
pub fn sparse_mean(evals: &[DomainEval]) -> Option<f64> {
    let pick: Vec<f64> = evals
        .iter()
        .filter(|e| e.domain > 0 || evals.len() == 1)
        .filter_map(|e| e.auc)
        .collect();
    (!pick.is_empty()).then(|| pick.iter().sum::<f64>() / pick.len() as f64)
}

/// Inputs shared by every training step.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Classifier distribution for every dataset row.
    pub soft: Option<Tensor>,
    /// Pseudo-labelled dominant training rows.
    pub pseudo: Vec<PseudoRecord>,
}

impl TrainData<'_> {
    fn soft_rows(&self, rows: &[usize]) -> Option<Tensor> {
        self.soft.as_ref().map(|s| s.gather_rows(rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
    pub val: Vec<DomainEval>,
    pub test: Vec<DomainEval>,
    pub val_score: Option<f64>,
    pub mu_t: f64,
    pub sigma_t: f64,
    pub mean_confidence: Option<f64>,
    pub mean_weight: Option<f64>,
}

impl EpochSummary {
    pub fn metrics_records(&self) -> Vec<MetricsRecord> {
        self.test
            .iter()
            .map(|e| MetricsRecord {
                epoch: self.epoch,
                domain: e.domain,
                auc: e.auc,
                loss: self.loss,
                mu_t: self.mu_t,
                sigma_t: self.sigma_t,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SsctlModel,
    pub adam: Adam,
    pub ema: GaussianWeightState,
    /// Next epoch to run.
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub best: Option<(usize, f64, SsctlModel)>,
    pub history: Vec<EpochSummary>,
    pub step_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, schema: &FeatureSchema) -> Result<Self> {
        config.validate()?;
        let model = SsctlModel::new(config.model_config(), schema)?;
        let ema = GaussianWeightState::new(schema.n_domains().max(2), config.ema_momentum)?;
        Ok(Self {
            adam: Adam::new(config.learning_rate),
            config,
            model,
            ema,
            epoch: 0,
            step: 0,
            best: None,
            history: Vec::new(),
            step_losses: Vec::new(),
        })
    }

    fn uses_pseudo(&self, data: &TrainData<'_>) -> bool {
        self.config.isct && !data.pseudo.is_empty()
    }

    /// Labelled batches and matching pseudo chunks for `epoch`. Pseudo
    /// weights come from the EMA state at the start of the epoch.
    pub fn epoch_plan(
        &self,
        data: &TrainData<'_>,
        epoch: usize,
    ) -> Result<(Vec<Vec<usize>>, Vec<Vec<PseudoRecord>>)> {
        let seed = self.config.seed;
        let labeled = batch_indices(
            &data.train,
            self.config.batch_size,
            Rng::derive_seed(seed, "shuffle", epoch as u64),
        )?;
        if !self.uses_pseudo(data) || labeled.is_empty() {
            return Ok((labeled, Vec::new()));
        }
        let mut recs = data.pseudo.clone();
        for r in &mut recs {
            r.weight = self.ema.weight(r.confidence);
        }
        Rng::substream(seed, "pseudo.shuffle", epoch as u64).shuffle(&mut recs);
        let chunk = recs.len().div_ceil(labeled.len());
        let mut chunks: Vec<Vec<PseudoRecord>> =
            recs.chunks(chunk).map(<[PseudoRecord]>::to_vec).collect();
        chunks.resize(labeled.len(), Vec::new());
        Ok((labeled, chunks))
    }

    fn train_step(
        &mut self,
        data: &TrainData<'_>,
        rows: &[usize],
        pseudo: &[PseudoRecord],
        batch_no: usize,
    ) -> Result<f64> {
        let seed = self.config.seed;
        let labeled = Batch::from_rows(data.dataset, rows);
        let soft_l = if self.config.sddn {
            data.soft_rows(rows)
        } else {
            None
        };
        let mut r1 = Rng::substream(seed, "dropout", self.step);
        let mut r2 = Rng::substream(seed, "dropout.pseudo", self.step);

        let active: Vec<&PseudoRecord> = pseudo.iter().filter(|r| r.weight > 0.0).collect();
        let pseudo_batch = if self.config.lambda > 0.0 && !active.is_empty() {
            let idx: Vec<usize> = active.iter().map(|r| r.sample_index).collect();
            let mut b = Batch::from_rows(data.dataset, &idx);
            b.domains = active.iter().map(|r| r.pseudo_domain).collect();
            b.weights = active.iter().map(|r| r.weight).collect();
            let soft = if self.config.sddn {
                data.soft_rows(&idx)
            } else {
                None
            };
            Some((b, soft))
        } else {
            None
        };

        let (loss, traces) = objective(
            &mut self.model,
            &labeled,
            soft_l.as_ref(),
            pseudo_batch.as_ref().map(|(b, s)| (b, s.as_ref())),
            self.config.lambda,
            Some((&mut r1, &mut r2)),
        )?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {loss} at epoch {} batch {batch_no}",
                self.epoch
            )));
        }
        for t in &traces {
            self.model.update_running(t);
        }
        if self.config.isct && !pseudo.is_empty() {
            let conf: Vec<f64> = pseudo.iter().map(|r| r.confidence).collect();
            self.ema.ema_update(&conf)?;
        }
        self.adam
            .step(self.model.parameters_mut())
            .map_err(|e| match e {
                Error::Numeric(m) => {
                    Error::Numeric(format!("{m} at epoch {} batch {batch_no}", self.epoch))
                }
                other => other,
            })?;
        self.step += 1;
        self.step_losses.push(loss);
        Ok(loss)
    }

    /// Runs one epoch and evaluates on validation and test rows.
    pub fn run_epoch(&mut self, data: &TrainData<'_>) -> Result<EpochSummary> {
        let (labeled, pseudo) = self.epoch_plan(data, self.epoch)?;
        let weights: Vec<f64> = pseudo.iter().flatten().map(|r| r.weight).collect();
        let confs: Vec<f64> = pseudo.iter().flatten().map(|r| r.confidence).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, rows) in labeled.iter().enumerate() {
            let chunk = pseudo.get(b).map_or(&[][..], Vec::as_slice);
            let loss = self.train_step(data, rows, chunk, b)?;
            sum += loss * rows.len() as f64;
            count += rows.len();
        }
        let soft = data.soft.as_ref().filter(|_| self.config.sddn);
        let val = evaluate(&self.model, data.dataset, &data.val, soft)?;
        let test = evaluate(&self.model, data.dataset, &data.test, soft)?;
        let val_score = sparse_mean(&val);
        let summary = EpochSummary {
            epoch: self.epoch,
            loss: sum / count.max(1) as f64,
            val,
            test,
            val_score,
            mu_t: self.ema.mu,
            sigma_t: self.ema.sigma,
            mean_confidence: mean(&confs),
            mean_weight: mean(&weights),
        };
        let improved = match (&self.best, val_score) {
            (None, _) => true,
            (Some((_, best, _)), Some(s)) => s > *best,
            (Some(_), None) => false,
        };
        if improved {
            self.best = Some((
                self.epoch,
                val_score.unwrap_or(f64::NEG_INFINITY),
                self.model.clone(),
            ));
        }
        info!(
            "epoch {}: loss {:.6}, val sparse-domain AUC {:?}, mu {:.4}, sigma {:.4}",
            self.epoch, summary.loss, val_score, self.ema.mu, self.ema.sigma
        );
        self.history.push(summary.clone());
        self.epoch += 1;
        Ok(summary)
    }

    /// Runs epochs until `self.epoch == until` (capped at the configured count).
    pub fn fit(
        &mut self,
        data: &TrainData<'_>,
        until: usize,
        mut on_epoch: impl FnMut(&Trainer, &EpochSummary) -> Result<()>,
    ) -> Result<()> {
        let until = until.min(self.config.epochs);
        while self.epoch < until {
            let s = self.run_epoch(data)?;
            on_epoch(self, &s)?;
        }
        Ok(())
    }

    pub fn best_model(&self) -> &SsctlModel {
        self.best.as_ref().map_or(&self.model, |(_, _, m)| m)
    }

    pub fn best_summary(&self) -> Option<&EpochSummary> {
        let (e, _, _) = self.best.as_ref()?;
        self.history.iter().find(|s| s.epoch == *e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: usize,
    pub n: usize,
    pub auc: Option<f64>,
    pub rimp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub accuracy: Option<f64>,
    pub param_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: TrainConfig,
    pub best_epoch: Option<usize>,
    /// Test AUC per domain at the best epoch.
    pub domains: Vec<DomainReport>,
    pub history: Vec<EpochSummary>,
    pub classifier: Option<ClassifierSummary>,
}

impl MetricsReport {
    pub fn from_trainer(trainer: &Trainer, classifier: Option<ClassifierSummary>) -> Self {
        let test = trainer
            .best_summary()
            .map(|s| s.test.clone())
            .unwrap_or_default();
        Self {
            config: trainer.config.clone(),
            best_epoch: trainer.best.as_ref().map(|(e, _, _)| *e),
            domains: test
                .into_iter()
                .map(|e| DomainReport {
                    domain: e.domain,
                    n: e.n,
                    auc: e.auc,
                    rimp: None,
                })
                .collect(),
            history: trainer.history.clone(),
            classifier,
        }
    }

    /// Fills RImp against per-domain baseline AUCs.
    pub fn with_baseline(mut self, baseline: &[(usize, f64)]) -> Result<Self> {
        for d in &mut self.domains {
            if let (Some(a), Some(&(_, b))) = (d.auc, baseline.iter().find(|(k, _)| *k == d.domain))
            {
                d.rimp = Some(rimp(a, b)?);
            }
        }
        Ok(self)
    }
}

/// Classifier distribution for every row of `dataset`.
pub fn soft_partition(classifier: &DomainClassifier, dataset: &Dataset) -> Result<Tensor> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut p = Tensor::zeros(&[dataset.len(), classifier.n_classes()]);
    for chunk in all.chunks(4096) {
        let probs = classifier.predict_proba(&Batch::from_rows(dataset, chunk))?;
        probs.scatter_rows_into(chunk, &mut p);
    }
    Ok(p)
}

/// Stage one: fits the domain classifier on the non-dominant rows among `train_rows`.
pub fn fit_classifier(
    dataset: &Dataset,
    train_rows: &[usize],
    config: &TrainConfig,
) -> Result<(DomainClassifier, ClassifierReport)> {
    let x_o: Vec<usize> = train_rows
        .iter()
        .copied()
        .filter(|&i| dataset.rows[i].domain != 0)
        .collect();
    let cfg = ClassifierConfig {
        seed: Rng::derive_seed(config.seed, "classifier", config.classifier.seed),
        ..config.classifier.clone()
    };
    let (c, r) = train_classifier(dataset, &x_o, &cfg)?;
    info!("classifier accuracy {:.4}", r.accuracy);
    Ok((c, r))
}

/// Splits the data and runs stages one and two as the config asks.
///
/// A supplied classifier or pseudo-label list replaces the corresponding
/// stage. Only training rows are used to fit the classifier and to form
/// the pseudo-labelled set.
pub fn prepare<'a>(
    dataset: &'a Dataset,
    config: &TrainConfig,
    classifier: Option<DomainClassifier>,
    pseudo: Option<Vec<PseudoRecord>>,
) -> Result<(
    TrainData<'a>,
    Option<DomainClassifier>,
    Option<ClassifierReport>,
)> {
    config.validate()?;
    let (train, val, test) = split(dataset, &config.split)?;
    let (mut clf, mut report) = (classifier, None);
    if config.needs_classifier() && clf.is_none() {
        let (c, r) = fit_classifier(dataset, &train, config)?;
        clf = Some(c);
        report = Some(r);
    }
    let soft = match (&clf, config.sddn) {
        (Some(c), true) => Some(soft_partition(c, dataset)?),
        (None, true) => {
            return Err(Error::config(
                "sddn",
                "domain scaling needs a domain classifier",
            ))
        }
        _ => None,
    };
    let in_train = {
        let mut mask = vec![false; dataset.len()];
        train.iter().for_each(|&i| mask[i] = true);
        mask
    };
    let pseudo = if config.isct {
        let ema = GaussianWeightState::new(dataset.schema.n_domains(), config.ema_momentum)?;
        match pseudo {
            Some(p) => {
                if let Some(r) = p.iter().find(|r| {
                    r.sample_index >= dataset.len() || dataset.rows[r.sample_index].domain != 0
                }) {
                    return Err(Error::Validation(format!(
                        "pseudo-label for row {} does not name a dominant-domain row",
                        r.sample_index
                    )));
                }
                p.into_iter().filter(|r| in_train[r.sample_index]).collect()
            }
            None => {
                let c = clf.as_ref().ok_or_else(|| {
                    Error::config("isct", "pseudo-labels need a domain classifier")
                })?;
                let (x_d, _) = partition(dataset);
                let x_d: Vec<usize> = x_d.into_iter().filter(|&i| in_train[i]).collect();
                pseudo_label(c, dataset, &x_d, &ema)?
            }
        }
    } else {
        Vec::new()
    };
    Ok((
        TrainData {
            dataset,
            train,
            val,
            test,
            soft,
            pseudo,
        },
        clf,
        report,
    ))
}

pub struct PipelineOutput {
    pub trainer: Trainer,
    pub classifier: Option<DomainClassifier>,
    pub classifier_report: Option<ClassifierReport>,
    pub report: MetricsReport,
}

/// All three stages end to end; the trainer holds the best-validation model.
pub fn run_pipeline(dataset: &Dataset, config: &TrainConfig) -> Result<PipelineOutput> {
    let (data, classifier, classifier_report) = prepare(dataset, config, None, None)?;
    let mut trainer = Trainer::new(config.clone(), &dataset.schema)?;
    trainer.fit(&data, config.epochs, |_, _| Ok(()))?;
    let summary = classifier.as_ref().map(|c| ClassifierSummary {
        accuracy: classifier_report.as_ref().map(|r| r.accuracy),
        param_hash: c.param_hash(),
    });
    let report = MetricsReport::from_trainer(&trainer, summary);
    Ok(PipelineOutput {
        trainer,
        classifier,
        classifier_report,
        report,
    })
}

#[cfg(test)]
mod tests;
