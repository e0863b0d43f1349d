use super::*;
use crate::data::{generate, SyntheticConfig};

fn small_data() -> Dataset {
    generate(&SyntheticConfig {
        n_samples: 3000,
        ..SyntheticConfig::separable()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 128,
        classifier: ClassifierConfig {
            hidden: vec![8],
            epochs: 1,
            ..ClassifierConfig::default()
        },
        ..TrainConfig::tiny()
    }
}

#[test]
fn profiles_and_validation() {
    assert_eq!(
        TrainConfig::profile("production").unwrap().expert_widths,
        vec![256, 128, 64]
    );
    assert_eq!(TrainConfig::default().batch_size, 256);
    assert!(TrainConfig::profile("huge").is_err());
    let bad = TrainConfig {
        lambda: -1.0,
        ..TrainConfig::desk()
    };
    assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "lambda"));
    let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lamda": 0.7}"#);
    assert!(parsed.is_err());
    let parsed: TrainConfig = serde_json::from_str(r#"{"lambda": 0.5}"#).unwrap();
    assert_eq!(parsed.lambda, 0.5);
}

#[test]
fn epoch_plan_spreads_pseudo_rows_over_steps() {
    let ds = small_data();
    let cfg = small_config();
    let (data, _, _) = prepare(&ds, &cfg, None, None).unwrap();
    let trainer = Trainer::new(cfg, &ds.schema).unwrap();
    let (labeled, pseudo) = trainer.epoch_plan(&data, 0).unwrap();
    assert_eq!(labeled.len(), pseudo.len());
    let total: usize = pseudo.iter().map(Vec::len).sum();
    assert_eq!(total, data.pseudo.len());
    let mut seen: Vec<usize> = pseudo.iter().flatten().map(|r| r.sample_index).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), total);
    assert!(pseudo
        .iter()
        .flatten()
        .all(|r| r.weight == trainer.ema.weight(r.confidence)));
}

#[test]
fn pseudo_rows_come_from_training_split() {
    let ds = small_data();
    let (data, clf, report) = prepare(&ds, &small_config(), None, None).unwrap();
    assert!(clf.is_some() && report.is_some());
    assert!(!data.pseudo.is_empty());
    for r in &data.pseudo {
        assert!(data.train.binary_search(&r.sample_index).is_ok());
        assert_eq!(ds.rows[r.sample_index].domain, 0);
        assert_ne!(r.pseudo_domain, 0);
    }
}

#[test]
fn backbone_needs_no_classifier() {
    let ds = small_data();
    let (data, clf, _) = prepare(&ds, &small_config().backbone(), None, None).unwrap();
    assert!(clf.is_none() && data.soft.is_none() && data.pseudo.is_empty());
}

#[test]
fn pipeline_runs_and_reports() {
    let ds = small_data();
    let out = run_pipeline(&ds, &small_config()).unwrap();
    assert_eq!(out.trainer.history.len(), 2);
    assert!(out.trainer.step_losses.iter().all(|l| l.is_finite()));
    assert!(out.report.best_epoch.is_some());
    assert_eq!(out.report.domains.len(), 3);
    let text = serde_json::to_string(&out.report).unwrap();
    let back: MetricsReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, out.report);
    let with = out.report.clone().with_baseline(&[(1, 0.5)]).unwrap();
    assert!(with.domains[1].rimp.is_some() && with.domains[2].rimp.is_none());
}

#[test]
fn trainer_checkpoint_round_trip_is_bitwise() {
    let ds = small_data();
    let cfg = small_config();
    let (data, _, _) = prepare(&ds, &cfg, None, None).unwrap();
    let mut t = Trainer::new(cfg, &ds.schema).unwrap();
    t.fit(&data, 1, |_, _| Ok(())).unwrap();
    let bytes = t.to_checkpoint().unwrap().to_bytes().unwrap();
    let back = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_checkpoint().unwrap().to_bytes().unwrap(), bytes);
}

#[test]
fn model_checkpoint_keeps_predictions() {
    let ds = small_data();
    let out = run_pipeline(&ds, &small_config()).unwrap();
    let model = out.trainer.best_model();
    let ckpt = model_to_checkpoint(model, &out.trainer.config, out.classifier.as_ref()).unwrap();
    let (back, meta, clf) =
        model_from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(&back, model);
    assert_eq!(meta.train.lambda, 0.7);
    let clf = clf.unwrap();
    assert_eq!(
        clf.param_hash(),
        out.classifier.as_ref().unwrap().param_hash()
    );
}

#[test]
fn objective_with_zero_lambda_ignores_pseudo_rows() {
    let ds = small_data();
    let mut model = SsctlModel::new(small_config().model_config(), &ds.schema).unwrap();
    let mut other = model.clone();
    let batch = Batch::from_rows(&ds, &[0, 1, 2, 3]);
    let p = Tensor::full(&[4, 2], 0.5);
    let (a, _) = objective(
        &mut model,
        &batch,
        Some(&p),
        Some((&batch, Some(&p))),
        0.0,
        None,
    )
    .unwrap();
    let (b, _) = objective(&mut other, &batch, Some(&p), None, 0.7, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(model, other);
}
