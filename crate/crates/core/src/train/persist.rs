use serde::{Deserialize, Serialize};

use super::{Adam, Checkpoint, EpochSummary, TrainConfig, Trainer};
use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::isct::{DomainClassifier, GaussianWeightState};
use crate::model::{ModelConfig, SsctlModel};
use crate::numeric::{Module, Parameter, Tensor};

/// Everything needed to rebuild a model's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model: ModelConfig,
    pub schema: FeatureSchema,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassifierMeta {
    schema: FeatureSchema,
    hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    epoch: usize,
    step: u64,
    adam_t: u64,
    ema: GaussianWeightState,
    best_epoch: Option<usize>,
    best_score: Option<f64>,
    history: Vec<EpochSummary>,
    step_losses: Vec<f64>,
}

fn push_params(ckpt: &mut Checkpoint, prefix: &str, params: Vec<&Parameter>) {
    for p in params {
        ckpt.push_tensor(format!("{prefix}{}", p.name), &p.value);
    }
}

fn assign(target: &mut Tensor, source: &Tensor, name: &str) -> Result<()> {
    if target.shape() != source.shape() {
        return Err(Error::Validation(format!(
            "array `{name}` has shape {:?}, expected {:?}",
            source.shape(),
            target.shape()
        )));
    }
    *target = source.clone();
    Ok(())
}

fn load_params(ckpt: &Checkpoint, prefix: &str, params: Vec<&mut Parameter>) -> Result<()> {
    for p in params {
        let name = format!("{prefix}{}", p.name);
        assign(&mut p.value, ckpt.tensor(&name)?, &name)?;
        p.zero_grad();
    }
    Ok(())
}

fn push_model(ckpt: &mut Checkpoint, prefix: &str, model: &mut SsctlModel) {
    push_params(ckpt, &format!("{prefix}param."), model.parameters());
    for (name, t) in model.buffers_mut() {
        ckpt.push_tensor(format!("{prefix}buffer.{name}"), t);
    }
}

fn load_model(ckpt: &Checkpoint, prefix: &str, model: &mut SsctlModel) -> Result<()> {
    load_params(ckpt, &format!("{prefix}param."), model.parameters_mut())?;
    for (name, t) in model.buffers_mut() {
        let key = format!("{prefix}buffer.{name}");
        assign(t, ckpt.tensor(&key)?, &key)?;
    }
    Ok(())
}

fn push_classifier(ckpt: &mut Checkpoint, clf: &DomainClassifier) -> Result<()> {
    ckpt.push_json(
        "clf.meta",
        &ClassifierMeta {
            schema: clf.schema.clone(),
            hidden: clf.hidden(),
        },
    )?;
    push_params(ckpt, "clf.param.", clf.parameters());
    Ok(())
}

pub fn classifier_to_checkpoint(clf: &DomainClassifier) -> Result<Checkpoint> {
    if !clf.is_frozen() {
        return Err(Error::Validation(
            "only a frozen classifier can be saved".into(),
        ));
    }
    let mut ckpt = Checkpoint::new();
    push_classifier(&mut ckpt, clf)?;
    Ok(ckpt)
}

/// Rebuilds a frozen classifier.
pub fn classifier_from_checkpoint(ckpt: &Checkpoint) -> Result<DomainClassifier> {
    let meta: ClassifierMeta = ckpt.json("clf.meta")?;
    let mut clf = DomainClassifier::new(&meta.schema, &meta.hidden, 0)?;
    load_params(ckpt, "clf.param.", clf.parameters_mut())?;
    clf.freeze();
    Ok(clf)
}

/// Model weights, running statistics, configuration and (optionally) the classifier that feeds it.
pub fn model_to_checkpoint(
    model: &SsctlModel,
    train: &TrainConfig,
    classifier: Option<&DomainClassifier>,
) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new();
    ckpt.push_json(
        "meta",
        &ModelMeta {
            model: model.config.clone(),
            schema: model.schema.clone(),
            train: train.clone(),
        },
    )?;
    push_model(&mut ckpt, "", &mut model.clone());
    if let Some(c) = classifier {
        push_classifier(&mut ckpt, c)?;
    }
    Ok(ckpt)
}

pub fn model_from_checkpoint(
    ckpt: &Checkpoint,
) -> Result<(SsctlModel, ModelMeta, Option<DomainClassifier>)> {
    let meta: ModelMeta = ckpt.json("meta")?;
    let mut model = SsctlModel::new(meta.model.clone(), &meta.schema)?;
    load_model(ckpt, "", &mut model)?;
    let clf = if ckpt.contains("clf.meta") {
        Some(classifier_from_checkpoint(ckpt)?)
    } else {
        None
    };
    Ok((model, meta, clf))
}

impl Trainer {
    /// Full resumable state: current and best model, optimizer moments, EMA state and history.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = model_to_checkpoint(&self.model, &self.config, None)?;
        let (best_epoch, best_score) = match &self.best {
            Some((e, s, m)) => {
                push_model(&mut ckpt, "best.", &mut m.clone());
                (Some(*e), s.is_finite().then_some(*s))
            }
            None => (None, None),
        };
        for (name, (m, v)) in &self.adam.moments {
            ckpt.push_tensor(format!("adam.m.{name}"), m);
            ckpt.push_tensor(format!("adam.v.{name}"), v);
        }
        ckpt.push_json(
            "trainer",
            &TrainerState {
                epoch: self.epoch,
                step: self.step,
                adam_t: self.adam.t,
                ema: self.ema,
                best_epoch,
                best_score,
                history: self.history.clone(),
                step_losses: self.step_losses.clone(),
            },
        )?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (model, meta, _) = model_from_checkpoint(ckpt)?;
        let state: TrainerState = ckpt.json("trainer")?;
        let best = match state.best_epoch {
            Some(e) => {
                let mut m = SsctlModel::new(meta.model.clone(), &meta.schema)?;
                load_model(ckpt, "best.", &mut m)?;
                Some((e, state.best_score.unwrap_or(f64::NEG_INFINITY), m))
            }
            None => None,
        };
        let mut adam = Adam::new(meta.train.learning_rate);
        adam.t = state.adam_t;
        for (name, data) in &ckpt.arrays {
            if let (Some(p), super::ArrayData::F64(m)) = (name.strip_prefix("adam.m."), data) {
                let v = ckpt.tensor(&format!("adam.v.{p}"))?;
                adam.moments.insert(p.to_string(), (m.clone(), v.clone()));
            }
        }
        Ok(Self {
            config: meta.train,
            model,
            adam,
            ema: state.ema,
            epoch: state.epoch,
            step: state.step,
            best,
            history: state.history,
            step_losses: state.step_losses,
        })
    }
}
