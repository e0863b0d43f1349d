//! The multi-domain network: embeddings, shared and domain-specific experts,
//! softmax gate, per-layer domain differentiation of the shared experts, and
//! the prediction tower.

mod mlp;
mod sddn;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, FeatureSchema};
use crate::error::{Error, Result};
use crate::numeric::ops::{
    row_dots, scale_rows, sigmoid_scalar, softmax_rows, softmax_rows_backward,
};
use crate::numeric::{Embedding, Module, Parameter, Rng, Tensor};

pub use mlp::{DropoutCtx, Mlp, MlpTrace};
pub use sddn::{
    scale_vector, scale_vector_backward, sddn_scale, sddn_scale_backward, soft_domain_embedding,
    soft_domain_embedding_backward, DiffNet, DnTrace,
};

/// Which layers receive domain scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SddnScope {
    #[default]
    Experts,
    ExpertsAndTower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub expert_widths: Vec<usize>,
    pub n_shared_experts: usize,
    pub gate_hidden: Vec<usize>,
    pub tower_hidden: Vec<usize>,
    pub delta: f64,
    pub dropout: f64,
    pub sddn: bool,
    pub sddn_scope: SddnScope,
    pub batch_norm: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.expert_widths.is_empty() || self.expert_widths.contains(&0) {
            return Err(Error::config(
                "expert_widths",
                "need at least one positive width",
            ));
        }
        if self.gate_hidden.contains(&0) || self.tower_hidden.contains(&0) {
            return Err(Error::config(
                "gate_hidden/tower_hidden",
                "widths must be positive",
            ));
        }
        if self.n_shared_experts == 0 {
            return Err(Error::config("n_shared_experts", "must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsctlModel {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    /// One table per feature field, general then contextual.
    pub embeddings: Vec<Embedding>,
    pub domain_embedding: Embedding,
    pub shared: Vec<Mlp>,
    pub specific: Vec<Mlp>,
    pub gate: Mlp,
    /// One network per shared-expert layer, shared by all shared experts.
    pub diff_nets: Vec<DiffNet>,
    /// One network per tower hidden layer (only with `ExpertsAndTower`).
    pub tower_diff_nets: Vec<DiffNet>,
    pub tower: Mlp,
}

/// Everything the backward pass needs, plus the observable intermediates.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    ids: Vec<Vec<usize>>,
    domains: Vec<usize>,
    pub r_e: Tensor,
    pub r_g: Tensor,
    pub e_d: Tensor,
    pub e_w: Option<Tensor>,
    p: Option<Tensor>,
    dn_d: Vec<DnTrace>,
    dn_w: Vec<DnTrace>,
    scales: Vec<Tensor>,
    tower_dn_d: Vec<DnTrace>,
    tower_dn_w: Vec<DnTrace>,
    tower_scales: Vec<Tensor>,
    shared: Vec<MlpTrace>,
    groups: Vec<(usize, Vec<usize>)>,
    specific: Vec<MlpTrace>,
    gate: MlpTrace,
    pub gate_weights: Tensor,
    pub z: Tensor,
    tower: MlpTrace,
    pub logits: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl ForwardTrace {
    /// All scale vectors γ produced in this pass.
    pub fn gammas(&self) -> impl Iterator<Item = &Tensor> {
        self.dn_d
            .iter()
            .chain(&self.dn_w)
            .chain(&self.tower_dn_d)
            .chain(&self.tower_dn_w)
            .map(|t| &t.gamma)
    }

    pub fn shared_outputs(&self) -> Vec<&Tensor> {
        self.shared.iter().map(|t| &t.output).collect()
    }
}

/// Sample positions grouped by domain, groups in ascending domain order; empty groups are omitted.
pub fn route_groups(domains: &[usize], n_domains: usize) -> Vec<(usize, Vec<usize>)> {
    let mut groups = vec![Vec::new(); n_domains];
    for (pos, &d) in domains.iter().enumerate() {
        groups[d].push(pos);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .collect()
}

impl SsctlModel {
    pub fn new(config: ModelConfig, schema: &FeatureSchema) -> Result<Self> {
        config.validate()?;
        let schema = schema.with_embedding_dim(config.embedding_dim);
        schema.validate()?;
        let d = config.embedding_dim;
        let seed = config.seed;
        let n = schema.n_domains();
        let embeddings: Vec<Embedding> = schema
            .feature_fields()
            .map(|f| Embedding::new("emb", &f.name, f.vocab, d, seed))
            .collect();
        let domain_embedding = Embedding::new("emb", &schema.domain_field.name, n, d, seed);
        let d_e = d * schema.n_features();
        let d_g = d * (schema.contextual_fields.len() + 1);
        let widths = &config.expert_widths;
        let bn = config.batch_norm;
        let shared = (0..config.n_shared_experts)
            .map(|i| Mlp::new(&format!("shared.{i}"), d_e, widths, true, bn, seed))
            .collect();
        let specific = (0..n)
            .map(|k| Mlp::new(&format!("specific.{k}"), d_e, widths, true, bn, seed))
            .collect();
        let mut gate_widths = config.gate_hidden.clone();
        gate_widths.push(config.n_shared_experts);
        let gate = Mlp::new("gate", d_g, &gate_widths, false, false, seed);
        let last = *widths.last().expect("validated non-empty");
        let mut tower_widths = config.tower_hidden.clone();
        tower_widths.push(1);
        let tower = Mlp::new("tower", 2 * last, &tower_widths, false, bn, seed);
        let (diff_nets, tower_diff_nets) = if config.sddn {
            let dn = widths
                .iter()
                .enumerate()
                .map(|(l, &w)| DiffNet::new(&format!("dn.{l}"), d, w, config.delta, seed))
                .collect();
            let tdn = if config.sddn_scope == SddnScope::ExpertsAndTower {
                config
                    .tower_hidden
                    .iter()
                    .enumerate()
                    .map(|(l, &w)| DiffNet::new(&format!("tower_dn.{l}"), d, w, config.delta, seed))
                    .collect()
            } else {
                Vec::new()
            };
            (dn, tdn)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            config,
            schema,
            embeddings,
            domain_embedding,
            shared,
            specific,
            gate,
            diff_nets,
            tower_diff_nets,
            tower,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.schema.n_domains()
    }

    /// `r_e` (general ⊕ contextual), `r_g` (contextual ⊕ domain) and the
    /// domain-indicator embedding `e_d`.
    pub fn build_inputs(&self, batch: &Batch) -> Result<(Tensor, Tensor, Tensor)> {
        if batch.ids.len() != self.embeddings.len() {
            return Err(Error::shape(
                "build_inputs",
                &[self.embeddings.len()],
                &[batch.ids.len()],
            ));
        }
        let per_field: Vec<Tensor> = self
            .embeddings
            .iter()
            .zip(&batch.ids)
            .map(|(e, ids)| e.forward(ids))
            .collect::<Result<_>>()?;
        let e_d = self.domain_embedding.forward(&batch.domains)?;
        let n_general = self.schema.general_fields.len();
        let r_e = Tensor::concat_cols(&per_field.iter().collect::<Vec<_>>())?;
        let mut gate_parts: Vec<&Tensor> = per_field[n_general..].iter().collect();
        gate_parts.push(&e_d);
        let r_g = Tensor::concat_cols(&gate_parts)?;
        Ok((r_e, r_g, e_d))
    }

    fn layer_scales(
        &self,
        nets: &[DiffNet],
        e_d: &Tensor,
        e_w: &Tensor,
    ) -> Result<(Vec<DnTrace>, Vec<DnTrace>, Vec<Tensor>)> {
        let mut dd = Vec::with_capacity(nets.len());
        let mut dw = Vec::with_capacity(nets.len());
        let mut scales = Vec::with_capacity(nets.len());
        for dn in nets {
            let td = dn.forward(e_d)?;
            let tw = dn.forward(e_w)?;
            scales.push(scale_vector(&td.gamma, &tw.gamma)?);
            dd.push(td);
            dw.push(tw);
        }
        Ok((dd, dw, scales))
    }

    /// Runs shared experts on `r_e` (optionally scaled per layer) and the
    /// specific expert of each sample's route, reassembled in input order.
    pub fn expert_forward(
        &self,
        r_e: &Tensor,
        routes: &[usize],
        scales: Option<&[Tensor]>,
        drop: &mut DropoutCtx<'_>,
    ) -> Result<(
        Vec<MlpTrace>,
        Vec<(usize, Vec<usize>)>,
        Vec<MlpTrace>,
        Tensor,
    )> {
        let shared = self
            .shared
            .iter()
            .map(|e| e.forward(r_e, scales, drop))
            .collect::<Result<Vec<_>>>()?;
        let groups = route_groups(routes, self.n_domains());
        let width = self.config.expert_widths[self.config.expert_widths.len() - 1];
        let mut s = Tensor::zeros(&[r_e.rows(), width]);
        let mut traces = Vec::with_capacity(groups.len());
        for (k, pos) in &groups {
            let t = self.specific[*k].forward(&r_e.gather_rows(pos), None, drop)?;
            t.output.scatter_rows_into(pos, &mut s);
            traces.push(t);
        }
        Ok((shared, groups, traces, s))
    }

    /// Gate weights `softmax(MLP(r_g))` and `z = (Σ_i w_i h_i) ⊕ s`.
    pub fn gate_aggregate(
        &self,
        r_g: &Tensor,
        shared: &[&Tensor],
        s: &Tensor,
    ) -> Result<(MlpTrace, Tensor, Tensor)> {
        let gt = self.gate.forward(r_g, None, &mut DropoutCtx::off())?;
        let w = softmax_rows(&gt.output)?;
        let mut mix = Tensor::zeros(s.shape());
        for (i, h) in shared.iter().enumerate() {
            let wi: Vec<f64> = (0..w.rows()).map(|b| w.get(b, i)).collect();
            mix.add_assign(&scale_rows(h, &wi))?;
        }
        let z = Tensor::concat_cols(&[&mix, s])?;
        Ok((gt, w, z))
    }

    /// Full forward pass. `soft` holds the classifier's non-dominant domain
    /// distribution per sample and is required when SDDN is enabled. Passing
    /// an `rng` selects training mode (dropout, batch statistics).
    pub fn forward(
        &self,
        batch: &Batch,
        soft: Option<&Tensor>,
        rng: Option<&mut Rng>,
    ) -> Result<ForwardTrace> {
        batch.validate(self.n_domains())?;
        let (r_e, r_g, e_d) = self.build_inputs(batch)?;
        let mut drop = DropoutCtx {
            rate: self.config.dropout,
            rng,
        };

        let (e_w, dn_d, dn_w, scales, tower_dn_d, tower_dn_w, tower_scales) = if self.config.sddn {
            let p = soft.ok_or_else(|| {
                Error::Validation("SDDN needs the soft-partition distribution".into())
            })?;
            if p.rows() != batch.len() {
                return Err(Error::shape("soft partition", p.shape(), &[batch.len()]));
            }
            let e_w = soft_domain_embedding(p, &self.domain_embedding.table.value)?;
            let (dd, dw, sc) = self.layer_scales(&self.diff_nets, &e_d, &e_w)?;
            let (tdd, tdw, tsc) = self.layer_scales(&self.tower_diff_nets, &e_d, &e_w)?;
            (Some(e_w), dd, dw, sc, tdd, tdw, tsc)
        } else {
            Default::default()
        };

        let expert_scales = if self.config.sddn {
            Some(scales.as_slice())
        } else {
            None
        };
        let (shared, groups, specific, s) =
            self.expert_forward(&r_e, &batch.domains, expert_scales, &mut drop)?;
        let outs: Vec<&Tensor> = shared.iter().map(|t| &t.output).collect();
        let (gate, gate_weights, z) = self.gate_aggregate(&r_g, &outs, &s)?;
        let tower_scale_arg = if self.tower_diff_nets.is_empty() {
            None
        } else {
            Some(tower_scales.as_slice())
        };
        let tower = self.tower.forward(&z, tower_scale_arg, &mut drop)?;
        let logits = tower.output.data().to_vec();
        let predictions = logits.iter().map(|&l| sigmoid_scalar(l)).collect();

        Ok(ForwardTrace {
            ids: batch.ids.clone(),
            domains: batch.domains.clone(),
            r_e,
            r_g,
            e_d,
            e_w,
            p: soft.filter(|_| self.config.sddn).cloned(),
            dn_d,
            dn_w,
            scales,
            tower_dn_d,
            tower_dn_w,
            tower_scales,
            shared,
            groups,
            specific,
            gate,
            gate_weights,
            z,
            tower,
            logits,
            predictions,
        })
    }

    /// Accumulates gradients of `Σ_b dlogits[b] · logit_b` into every parameter.
    /// The soft-partition distribution is a constant.
    pub fn backward(&mut self, trace: &ForwardTrace, dlogits: &[f64]) -> Result<()> {
        let b = trace.logits.len();
        if dlogits.len() != b || trace.shared.len() != self.shared.len() {
            return Err(Error::Internal(
                "trace does not belong to this model/batch".into(),
            ));
        }
        let d = self.config.embedding_dim;
        let width = *self.config.expert_widths.last().expect("non-empty");

        // tower
        let dout = Tensor::matrix(b, 1, dlogits.to_vec())?;
        let (dz, tower_dscales) = self.tower.backward(&trace.tower, &dout)?;
        let parts = dz.split_cols(&[width, width])?;
        let (dmix, ds) = (&parts[0], &parts[1]);

        // gate
        let m = self.shared.len();
        let mut dw = Tensor::zeros(&[b, m]);
        let mut dh = Vec::with_capacity(m);
        for (i, t) in trace.shared.iter().enumerate() {
            let dots = row_dots(&t.output, dmix)?;
            for (r, v) in dots.into_iter().enumerate() {
                dw.set(r, i, v);
            }
            let wi: Vec<f64> = (0..b).map(|r| trace.gate_weights.get(r, i)).collect();
            dh.push(scale_rows(dmix, &wi));
        }
        let dgate_logits = softmax_rows_backward(&trace.gate_weights, &dw)?;
        let (dr_g, _) = self.gate.backward(&trace.gate, &dgate_logits)?;

        // experts
        let mut dr_e = Tensor::zeros(trace.r_e.shape());
        let mut dscales: Vec<Tensor> = trace
            .scales
            .iter()
            .map(|s| Tensor::zeros(s.shape()))
            .collect();
        for ((expert, t), g) in self.shared.iter_mut().zip(&trace.shared).zip(&dh) {
            let (dx, dsc) = expert.backward(t, g)?;
            dr_e.add_assign(&dx)?;
            for (acc, v) in dscales.iter_mut().zip(dsc) {
                if let Some(v) = v {
                    acc.add_assign(&v)?;
                }
            }
        }
        for ((k, pos), t) in trace.groups.iter().zip(&trace.specific) {
            let (dx, _) = self.specific[*k].backward(t, &ds.gather_rows(pos))?;
            for (row, &p) in pos.iter().enumerate() {
                for (a, v) in dr_e.row_mut(p).iter_mut().zip(dx.row(row)) {
                    *a += v;
                }
            }
        }

        // differentiation networks
        let mut de_d = Tensor::zeros(&[b, d]);
        let mut de_w = Tensor::zeros(&[b, d]);
        if self.config.sddn {
            let tower_dscales: Vec<Tensor> = tower_dscales
                .into_iter()
                .map(|v| v.unwrap_or_else(|| Tensor::zeros(&[b, 1])))
                .collect();
            let per_layer = self
                .diff_nets
                .iter_mut()
                .zip(trace.dn_d.iter().zip(&trace.dn_w))
                .zip(trace.scales.iter().zip(&dscales))
                .chain(
                    self.tower_diff_nets
                        .iter_mut()
                        .zip(trace.tower_dn_d.iter().zip(&trace.tower_dn_w))
                        .zip(trace.tower_scales.iter().zip(&tower_dscales)),
                );
            for ((dn, (td, tw)), (scale, dscale)) in per_layer {
                let (gd, gw) = scale_vector_backward(&td.gamma, &tw.gamma, scale, dscale)?;
                de_d.add_assign(&dn.backward(td, &gd)?)?;
                de_w.add_assign(&dn.backward(tw, &gw)?)?;
            }
        }

        // embeddings
        let n_general = self.schema.general_fields.len();
        let n_ctx = self.schema.contextual_fields.len();
        let re_parts = dr_e.split_cols(&vec![d; n_general + n_ctx])?;
        for ((emb, ids), g) in self.embeddings.iter_mut().zip(&trace.ids).zip(&re_parts) {
            emb.backward(ids, g)?;
        }
        let rg_parts = dr_g.split_cols(&vec![d; n_ctx + 1])?;
        for (f, g) in rg_parts[..n_ctx].iter().enumerate() {
            self.embeddings[n_general + f].backward(&trace.ids[n_general + f], g)?;
        }
        de_d.add_assign(&rg_parts[n_ctx])?;
        self.domain_embedding.backward(&trace.domains, &de_d)?;
        if let Some(p) = &trace.p {
            let g =
                soft_domain_embedding_backward(p, &de_w, self.domain_embedding.table.grad.shape())?;
            self.domain_embedding.table.grad.add_assign(&g)?;
        }
        Ok(())
    }

    /// Folds batch-norm statistics from a training pass into the running estimates.
    pub fn update_running(&mut self, trace: &ForwardTrace) {
        for (e, t) in self.shared.iter_mut().zip(&trace.shared) {
            e.update_running(t);
        }
        for ((k, _), t) in trace.groups.iter().zip(&trace.specific) {
            self.specific[*k].update_running(t);
        }
        self.tower.update_running(&trace.tower);
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for e in self.shared.iter_mut().chain(self.specific.iter_mut()) {
            out.extend(e.buffers_mut());
        }
        out.extend(self.tower.buffers_mut());
        out
    }

    /// Parameters whose gradients flow from samples of domain `k` only.
    pub fn specific_parameters_mut(&mut self, k: usize) -> Vec<&mut Parameter> {
        self.specific[k].parameters_mut()
    }
}

impl Module for SsctlModel {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self
            .embeddings
            .iter()
            .flat_map(|e| e.parameters())
            .collect();
        p.extend(self.domain_embedding.parameters());
        p.extend(self.shared.iter().flat_map(|e| e.parameters()));
        p.extend(self.specific.iter().flat_map(|e| e.parameters()));
        p.extend(self.gate.parameters());
        p.extend(self.diff_nets.iter().flat_map(|e| e.parameters()));
        p.extend(self.tower_diff_nets.iter().flat_map(|e| e.parameters()));
        p.extend(self.tower.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self
            .embeddings
            .iter_mut()
            .flat_map(|e| e.parameters_mut())
            .collect();
        p.extend(self.domain_embedding.parameters_mut());
        p.extend(self.shared.iter_mut().flat_map(|e| e.parameters_mut()));
        p.extend(self.specific.iter_mut().flat_map(|e| e.parameters_mut()));
        p.extend(self.gate.parameters_mut());
        p.extend(self.diff_nets.iter_mut().flat_map(|e| e.parameters_mut()));
        p.extend(
            self.tower_diff_nets
                .iter_mut()
                .flat_map(|e| e.parameters_mut()),
        );
        p.extend(self.tower.parameters_mut());
        p
    }
}

#[cfg(test)]
mod tests;
