//! Seeded tiny model used to verify gradients of the full objective.

use super::objective;
use crate::data::{Batch, FeatureSchema, Field};
use crate::error::Result;
use crate::model::{ModelConfig, SddnScope, SsctlModel};
use crate::numeric::{grad_check_scaled, GradCheckReport, Module, Rng, Tensor};

/// Largest relative error per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub groups: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

impl GroupReport {
    fn from_report(r: &GradCheckReport) -> Self {
        let mut groups: Vec<(String, f64)> = Vec::new();
        for (name, err) in &r.per_param {
            let g = parameter_group(name);
            match groups.iter_mut().find(|(n, _)| *n == g) {
                Some((_, e)) => *e = e.max(*err),
                None => groups.push((g, *err)),
            }
        }
        Self {
            groups,
            max_rel_err: r.max_rel_err,
        }
    }

    pub fn failing(&self, tol: f64) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|(_, e)| !(*e < tol))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// `shared.0.fc1.weight` → `shared.0`, `gate.fc0.bias` → `gate`, `emb.time_slot` → `emb.time_slot`.
pub fn parameter_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    if parts[0] == "emb" || parts.len() < 2 {
        return name.to_string();
    }
    if parts[1].chars().all(|c| c.is_ascii_digit()) {
        format!("{}.{}", parts[0], parts[1])
    } else {
        parts[0].to_string()
    }
}

fn reference_schema() -> FeatureSchema {
    FeatureSchema {
        general_fields: vec![Field::new("user_group", 4), Field::new("item_category", 5)],
        contextual_fields: vec![Field::new("time_slot", 3)],
        domain_field: Field::new("domain", 3),
        embedding_dim: 3,
    }
}

/// Three domains, two shared experts of widths `[4, 3]`, embedding size 3,
/// dropout off. Embeddings and the differentiation networks' output layers
/// are re-drawn at a larger scale so every path carries signal.
pub fn reference_model(seed: u64) -> Result<SsctlModel> {
    let cfg = ModelConfig {
        embedding_dim: 3,
        expert_widths: vec![4, 3],
        n_shared_experts: 2,
        gate_hidden: vec![4],
        tower_hidden: vec![4],
        delta: 2.0,
        dropout: 0.0,
        sddn: true,
        sddn_scope: SddnScope::Experts,
        batch_norm: false,
        seed,
    };
    let mut model = SsctlModel::new(cfg, &reference_schema())?;
    let mut rng = Rng::substream(seed, "reference", 0);
    for e in model
        .embeddings
        .iter_mut()
        .chain(std::iter::once(&mut model.domain_embedding))
    {
        e.table.value = e.table.value.map(|_| rng.uniform(-0.8, 0.8));
    }
    for dn in &mut model.diff_nets {
        dn.fc2.weight.value = dn.fc2.weight.value.map(|_| rng.uniform(-1.0, 1.0));
        dn.fc2.bias.value = dn.fc2.bias.value.map(|_| rng.uniform(-0.5, 0.5));
    }
    Ok(model)
}

fn reference_batches(seed: u64) -> (Batch, Tensor, Batch, Tensor) {
    let schema = reference_schema();
    let mut rng = Rng::substream(seed, "reference.batch", 0);
    let b = 5;
    let ids: Vec<Vec<usize>> = schema
        .feature_fields()
        .map(|f| (0..b).map(|_| rng.below(f.vocab)).collect())
        .collect();
    let labeled = Batch {
        rows: (0..b).collect(),
        ids,
        labels: vec![1.0, 0.0, 0.0, 1.0, 0.0],
        domains: vec![0, 1, 2, 0, 0],
        weights: vec![1.0; b],
    };
    let soft = |rng: &mut Rng, n: usize| {
        let mut p = Tensor::zeros(&[n, 2]);
        for r in 0..n {
            let a = rng.uniform(0.05, 0.95);
            p.set(r, 0, a);
            p.set(r, 1, 1.0 - a);
        }
        p
    };
    let soft_l = soft(&mut rng, b);
    // the dominant rows again, under pseudo domains with confidence weights
    let pos = [0, 3, 4];
    let mut pseudo = labeled.select(&pos);
    pseudo.domains = vec![2, 1, 2];
    pseudo.weights = vec![1.0, 0.45, 0.8];
    let soft_p = soft_l.gather_rows(&pos);
    (labeled, soft_l, pseudo, soft_p)
}

/// Central-difference check (ε = 1e-5) of the combined objective on the
/// reference model. `corruption` scales the analytic gradient first.
pub fn reference_gradcheck(seed: u64, corruption: f64) -> Result<GroupReport> {
    let mut model = reference_model(seed)?;
    let (labeled, soft_l, pseudo, soft_p) = reference_batches(seed);
    let report = grad_check_scaled(
        &mut model,
        |m: &mut SsctlModel| {
            m.zero_grad();
            let (loss, _) = objective(
                m,
                &labeled,
                Some(&soft_l),
                Some((&pseudo, Some(&soft_p))),
                0.7,
                None,
            )?;
            Ok(loss)
        },
        1e-5,
        200,
        seed,
        corruption,
    )?;
    Ok(GroupReport::from_report(&report))
}
