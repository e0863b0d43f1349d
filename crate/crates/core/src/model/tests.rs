use super::*;
use crate::data::{toy_schema, Field};
use crate::numeric::grad_check;

fn config(sddn: bool) -> ModelConfig {
    ModelConfig {
        embedding_dim: 3,
        expert_widths: vec![4, 3],
        n_shared_experts: 2,
        gate_hidden: vec![4],
        tower_hidden: vec![4],
        delta: 2.0,
        dropout: 0.0,
        sddn,
        sddn_scope: SddnScope::Experts,
        batch_norm: false,
        seed: 11,
    }
}

fn random_batch(rng: &mut Rng, schema: &FeatureSchema, b: usize) -> Batch {
    let ids = schema
        .feature_fields()
        .map(|f| (0..b).map(|_| rng.below(f.vocab)).collect())
        .collect();
    Batch {
        rows: (0..b).collect(),
        ids,
        labels: (0..b)
            .map(|_| f64::from(u8::from(rng.bernoulli(0.5))))
            .collect(),
        domains: (0..b).map(|_| rng.below(schema.n_domains())).collect(),
        weights: vec![1.0; b],
    }
}

fn random_soft(rng: &mut Rng, b: usize, n: usize) -> Tensor {
    let mut p = Tensor::zeros(&[b, n - 1]);
    for r in 0..b {
        let raw: Vec<f64> = (0..n - 1).map(|_| rng.uniform(0.1, 1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (c, v) in raw.into_iter().enumerate() {
            p.set(r, c, v / s);
        }
    }
    p
}

fn perturb_dn(model: &mut SsctlModel, seed: u64) {
    let mut rng = Rng::new(seed);
    for dn in model
        .diff_nets
        .iter_mut()
        .chain(model.tower_diff_nets.iter_mut())
    {
        for v in dn
            .fc2
            .weight
            .value
            .data_mut()
            .iter_mut()
            .chain(dn.fc2.bias.value.data_mut())
        {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
}

fn scale_tables(model: &mut SsctlModel, k: f64) {
    for e in model
        .embeddings
        .iter_mut()
        .chain(std::iter::once(&mut model.domain_embedding))
    {
        e.table.value.scale_in_place(k);
    }
}

#[test]
fn input_widths() {
    let schema = FeatureSchema {
        general_fields: vec![Field::new("g", 3)],
        contextual_fields: vec![Field::new("c", 2)],
        domain_field: Field::new("domain", 2),
        embedding_dim: 2,
    };
    let cfg = ModelConfig {
        embedding_dim: 2,
        ..config(false)
    };
    let model = SsctlModel::new(cfg, &schema).unwrap();
    let batch = random_batch(&mut Rng::new(1), &schema, 3);
    let (r_e, r_g, e_d) = model.build_inputs(&batch).unwrap();
    assert_eq!(r_e.shape(), &[3, 4]);
    assert_eq!(r_g.shape(), &[3, 4]);
    assert_eq!(e_d.shape(), &[3, 2]);
}

#[test]
fn zero_tables_give_zero_inputs() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(false), &schema).unwrap();
    scale_tables(&mut model, 0.0);
    let batch = random_batch(&mut Rng::new(2), &schema, 4);
    let (r_e, r_g, e_d) = model.build_inputs(&batch).unwrap();
    assert!([r_e, r_g, e_d].iter().all(|t| t.max_abs() == 0.0));
}

#[test]
fn inputs_match_per_field_lookups() {
    let schema = toy_schema(3);
    let model = SsctlModel::new(config(false), &schema).unwrap();
    let batch = random_batch(&mut Rng::new(3), &schema, 6);
    let (r_e, r_g, e_d) = model.build_inputs(&batch).unwrap();
    let d = 3;
    for b in 0..6 {
        for (f, emb) in model.embeddings.iter().enumerate() {
            let row = emb.table.value.row(batch.ids[f][b]);
            assert_eq!(&r_e.row(b)[f * d..(f + 1) * d], row);
        }
        let ctx = model.embeddings[2].table.value.row(batch.ids[2][b]);
        assert_eq!(&r_g.row(b)[..d], ctx);
        let dom = model.domain_embedding.table.value.row(batch.domains[b]);
        assert_eq!(&r_g.row(b)[d..], dom);
        assert_eq!(e_d.row(b), dom);
    }
}

#[test]
fn identity_expert_is_relu_of_input() {
    let schema = toy_schema(3);
    let cfg = ModelConfig {
        expert_widths: vec![9],
        n_shared_experts: 1,
        ..config(false)
    };
    let mut model = SsctlModel::new(cfg, &schema).unwrap();
    model.shared[0].layers[0].weight.value = Tensor::identity(9);
    scale_tables(&mut model, 50.0);
    let batch = random_batch(&mut Rng::new(4), &schema, 5);
    let (r_e, _, _) = model.build_inputs(&batch).unwrap();
    let (shared, _, _, _) = model
        .expert_forward(&r_e, &batch.domains, None, &mut DropoutCtx::off())
        .unwrap();
    assert_eq!(shared[0].output, crate::numeric::ops::relu(&r_e));
}

#[test]
fn routing_selects_specific_expert() {
    let schema = toy_schema(3);
    let model = SsctlModel::new(config(false), &schema).unwrap();
    let mut batch = random_batch(&mut Rng::new(5), &schema, 2);
    batch.domains = vec![0, 1];
    let (r_e, _, _) = model.build_inputs(&batch).unwrap();
    let (_, _, _, s) = model
        .expert_forward(&r_e, &batch.domains, None, &mut DropoutCtx::off())
        .unwrap();
    for (b, k) in [(0usize, 0usize), (1, 1)] {
        let own = model.specific[k]
            .forward(&r_e.gather_rows(&[b]), None, &mut DropoutCtx::off())
            .unwrap();
        assert_eq!(s.row(b), own.output.row(0));
    }
}

#[test]
fn singleton_gate_concatenates() {
    let schema = toy_schema(3);
    let cfg = ModelConfig {
        n_shared_experts: 1,
        ..config(false)
    };
    let model = SsctlModel::new(cfg, &schema).unwrap();
    let batch = random_batch(&mut Rng::new(6), &schema, 4);
    let t = model.forward(&batch, None, None).unwrap();
    assert!(t.gate_weights.data().iter().all(|&w| w == 1.0));
    let h = t.shared_outputs()[0].clone();
    let parts = t.z.split_cols(&[3, 3]).unwrap();
    assert_eq!(parts[0], h);
}

#[test]
fn equal_gate_logits_average_experts() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(false), &schema).unwrap();
    let last = model.gate.layers.len() - 1;
    model.gate.layers[last].weight.value.fill(0.0);
    let batch = random_batch(&mut Rng::new(7), &schema, 4);
    let t = model.forward(&batch, None, None).unwrap();
    assert!(t.gate_weights.data().iter().all(|&w| w == 0.5));
    let h = t.shared_outputs();
    for b in 0..4 {
        for c in 0..3 {
            let want = 0.5 * h[0].get(b, c) + 0.5 * h[1].get(b, c);
            assert!((t.z.get(b, c) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn gate_mixture_matches_loop_oracle() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(true), &schema).unwrap();
    perturb_dn(&mut model, 8);
    let mut rng = Rng::new(9);
    let batch = random_batch(&mut rng, &schema, 7);
    let p = random_soft(&mut rng, 7, 3);
    let t = model.forward(&batch, Some(&p), None).unwrap();
    let h = t.shared_outputs();
    for b in 0..7 {
        let total: f64 = t.gate_weights.row(b).iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for c in 0..3 {
            let want: f64 = (0..2)
                .map(|i| t.gate_weights.get(b, i) * h[i].get(b, c))
                .sum();
            assert!((t.z.get(b, c) - want).abs() < 1e-14);
        }
    }
}

#[test]
fn batched_forward_matches_per_sample_forward() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(true), &schema).unwrap();
    perturb_dn(&mut model, 10);
    let mut rng = Rng::new(11);
    let batch = random_batch(&mut rng, &schema, 9);
    let p = random_soft(&mut rng, 9, 3);
    let full = model.forward(&batch, Some(&p), None).unwrap();
    for b in 0..9 {
        let one = model
            .forward(&batch.select(&[b]), Some(&p.gather_rows(&[b])), None)
            .unwrap();
        assert!((one.logits[0] - full.logits[b]).abs() < 1e-12);
    }
}

#[test]
fn zero_parameters_predict_one_half() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(true), &schema).unwrap();
    for p in model.parameters_mut() {
        p.value.fill(0.0);
    }
    let mut rng = Rng::new(12);
    let batch = random_batch(&mut rng, &schema, 5);
    let p = random_soft(&mut rng, 5, 3);
    let t = model.forward(&batch, Some(&p), None).unwrap();
    assert!(t.predictions.iter().all(|&y| y == 0.5));
}

#[test]
fn neutral_sddn_matches_backbone_bitwise() {
    let schema = toy_schema(3);
    let on = SsctlModel::new(config(true), &schema).unwrap();
    let off = SsctlModel::new(config(false), &schema).unwrap();
    let mut rng = Rng::new(13);
    let batch = random_batch(&mut rng, &schema, 8);
    let p = random_soft(&mut rng, 8, 3);
    let a = on.forward(&batch, Some(&p), None).unwrap();
    let b = off.forward(&batch, None, None).unwrap();
    assert_eq!(a.logits, b.logits);
    assert!(a.gammas().all(|g| g.data().iter().all(|&v| v == 1.0)));
}

#[test]
fn gammas_stay_inside_bounds() {
    let schema = toy_schema(3);
    let cfg = ModelConfig {
        sddn_scope: SddnScope::ExpertsAndTower,
        ..config(true)
    };
    let mut model = SsctlModel::new(cfg, &schema).unwrap();
    perturb_dn(&mut model, 14);
    scale_tables(&mut model, 300.0);
    let mut rng = Rng::new(15);
    let batch = random_batch(&mut rng, &schema, 32);
    let p = random_soft(&mut rng, 32, 3);
    let t = model.forward(&batch, Some(&p), None).unwrap();
    assert_eq!(t.gammas().count(), 2 * (2 + 1));
    assert!(t
        .gammas()
        .all(|g| g.data().iter().all(|&v| v > 0.0 && v < 2.0)));
}

#[test]
fn sddn_requires_soft_partition() {
    let schema = toy_schema(3);
    let model = SsctlModel::new(config(true), &schema).unwrap();
    let batch = random_batch(&mut Rng::new(16), &schema, 3);
    assert!(matches!(
        model.forward(&batch, None, None),
        Err(Error::Validation(_))
    ));
}

fn check_gradients(scope: SddnScope, batch_norm: bool) {
    let schema = toy_schema(3);
    let cfg = ModelConfig {
        sddn_scope: scope,
        batch_norm,
        ..config(true)
    };
    let mut model = SsctlModel::new(cfg, &schema).unwrap();
    perturb_dn(&mut model, 17);
    scale_tables(&mut model, 60.0);
    let mut rng = Rng::new(18);
    let b = if batch_norm { 40 } else { 5 };
    let batch = random_batch(&mut rng, &schema, b);
    let p = random_soft(&mut rng, b, 3);
    let coeff: Vec<f64> = (0..b).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let report = grad_check(
        &mut model,
        |m: &mut SsctlModel| {
            m.zero_grad();
            let mut dummy = Rng::new(0);
            // batch norm needs training mode to exercise its batch statistics
            let t = m.forward(&batch, Some(&p), batch_norm.then_some(&mut dummy))?;
            m.backward(&t, &coeff)?;
            Ok(t.logits.iter().zip(&coeff).map(|(l, c)| l * c).sum())
        },
        1e-5,
        200,
        19,
    )
    .unwrap();
    // a bias followed by batch norm has no effect on the output
    let all: Vec<String> = model.parameters().iter().map(|p| p.name.clone()).collect();
    let cancelled = |n: &str| {
        n.strip_suffix(".bias")
            .and_then(|stem| stem.rsplit_once(".fc"))
            .is_some_and(|(head, l)| all.iter().any(|a| *a == format!("{head}.bn{l}.gamma")))
    };
    let failing: Vec<&str> = report
        .failing(1e-4)
        .into_iter()
        .filter(|n| !cancelled(n))
        .collect();
    assert!(failing.is_empty(), "{failing:?}");
    for p in model
        .parameters()
        .into_iter()
        .filter(|p| cancelled(&p.name))
    {
        assert!(p.grad.max_abs() < 1e-12, "{}", p.name);
    }
    let names: Vec<&str> = report.per_param.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"dn.1.fc1.weight"));
    assert!(names.contains(&"emb.domain"));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    check_gradients(SddnScope::Experts, false);
}

#[test]
fn tower_scaling_gradients_match_finite_differences() {
    check_gradients(SddnScope::ExpertsAndTower, false);
}

#[test]
fn batch_norm_gradients_match_finite_differences() {
    check_gradients(SddnScope::Experts, true);
}

#[test]
fn backward_is_linear_in_upstream() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(true), &schema).unwrap();
    perturb_dn(&mut model, 20);
    let mut rng = Rng::new(21);
    let batch = random_batch(&mut rng, &schema, 6);
    let p = random_soft(&mut rng, 6, 3);
    let up: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let t = model.forward(&batch, Some(&p), None).unwrap();

    model.backward(&t, &[0.0; 6]).unwrap();
    assert!(model.parameters().iter().all(|p| p.grad.max_abs() == 0.0));

    model.backward(&t, &up).unwrap();
    let once: Vec<Tensor> = model.parameters().iter().map(|p| p.grad.clone()).collect();
    model.zero_grad();
    let doubled: Vec<f64> = up.iter().map(|u| 2.0 * u).collect();
    model.backward(&t, &doubled).unwrap();
    for (p, g) in model.parameters().iter().zip(&once) {
        for (a, b) in p.grad.data().iter().zip(g.data()) {
            assert!(
                (a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0),
                "{}",
                p.name
            );
        }
    }
}

#[test]
fn permuting_samples_permutes_predictions() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(true), &schema).unwrap();
    perturb_dn(&mut model, 22);
    let mut rng = Rng::new(23);
    let batch = random_batch(&mut rng, &schema, 10);
    let p = random_soft(&mut rng, 10, 3);
    let perm = rng.permutation(10);
    let a = model.forward(&batch, Some(&p), None).unwrap();
    let b = model
        .forward(&batch.select(&perm), Some(&p.gather_rows(&perm)), None)
        .unwrap();
    for (i, &src) in perm.iter().enumerate() {
        assert!((b.predictions[i] - a.predictions[src]).abs() < 1e-15);
    }
}

#[test]
fn specific_expert_changes_only_its_domain() {
    let schema = toy_schema(3);
    let mut model = SsctlModel::new(config(true), &schema).unwrap();
    perturb_dn(&mut model, 24);
    let mut rng = Rng::new(25);
    let batch = random_batch(&mut rng, &schema, 30);
    let p = random_soft(&mut rng, 30, 3);
    let before = model.forward(&batch, Some(&p), None).unwrap().predictions;
    for param in model.specific_parameters_mut(1) {
        param.value.data_mut().iter_mut().for_each(|v| *v += 0.3);
    }
    let after = model.forward(&batch, Some(&p), None).unwrap().predictions;
    for b in 0..30 {
        if batch.domains[b] == 1 {
            assert_ne!(before[b], after[b]);
        } else {
            assert_eq!(before[b], after[b]);
        }
    }
}
