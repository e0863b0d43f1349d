use crate::error::{Error, Result};
use crate::numeric::ops::{relu, relu_backward};
use crate::numeric::{
    dropout, dropout_backward, BatchNorm, BatchNormTrace, Linear, Module, Parameter, Rng, Tensor,
};

/// Stack of fully connected layers.
///
/// "Activated" layers apply (optional batch norm), relu, an optional
/// per-sample scale and dropout. With `activate_last = false` the final layer
/// is a plain affine map producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<BatchNorm>,
    activate_last: bool,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Tensor>,
    norm: Vec<Option<BatchNormTrace>>,
    pre: Vec<Tensor>,
    act: Vec<Tensor>,
    scales: Vec<Option<Tensor>>,
    masks: Vec<Option<Tensor>>,
    pub output: Tensor,
}

/// Dropout settings for one forward pass. `rng: None` disables dropout.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut Rng>,
}

impl DropoutCtx<'_> {
    pub fn off() -> DropoutCtx<'static> {
        DropoutCtx {
            rate: 0.0,
            rng: None,
        }
    }
}

impl Mlp {
    pub fn new(
        prefix: &str,
        input: usize,
        widths: &[usize],
        activate_last: bool,
        batch_norm: bool,
        seed: u64,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut norms = Vec::new();
        let mut fan_in = input;
        for (l, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(&format!("{prefix}.fc{l}"), fan_in, w, seed));
            let activated = activate_last || l + 1 < widths.len();
            if batch_norm && activated {
                norms.push(BatchNorm::new(&format!("{prefix}.bn{l}"), w));
            }
            fan_in = w;
        }
        Self {
            layers,
            norms,
            activate_last,
        }
    }

    pub fn n_activated(&self) -> usize {
        if self.activate_last {
            self.layers.len()
        } else {
            self.layers.len().saturating_sub(1)
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Linear::out_dim).collect()
    }

    pub fn forward(
        &self,
        x: &Tensor,
        scales: Option<&[Tensor]>,
        drop: &mut DropoutCtx<'_>,
    ) -> Result<MlpTrace> {
        let n_act = self.n_activated();
        if let Some(s) = scales {
            if s.len() != n_act {
                return Err(Error::shape("mlp scales", &[n_act], &[s.len()]));
            }
        }
        let training = drop.rng.is_some();
        let mut trace = MlpTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            norm: Vec::new(),
            pre: Vec::new(),
            act: Vec::new(),
            scales: Vec::new(),
            masks: Vec::new(),
            output: Tensor::zeros(&[0]),
        };
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.forward(&cur)?;
            trace.inputs.push(cur);
            if l >= n_act {
                cur = a;
                continue;
            }
            let a = match self.norms.get(l) {
                Some(bn) => {
                    let (y, t) = bn.forward(&a, training)?;
                    trace.norm.push(Some(t));
                    y
                }
                None => {
                    trace.norm.push(None);
                    a
                }
            };
            let h = relu(&a);
            let scaled = match scales {
                Some(s) => {
                    let out = h.zip_map(&s[l], |v, k| v * k)?;
                    trace.scales.push(Some(s[l].clone()));
                    out
                }
                None => {
                    trace.scales.push(None);
                    h.clone()
                }
            };
            let (out, mask) = match drop.rng.as_deref_mut() {
                Some(rng) => dropout(&scaled, drop.rate, rng, true)?,
                None => (scaled, None),
            };
            trace.pre.push(a);
            trace.act.push(h);
            trace.masks.push(mask);
            cur = out;
        }
        trace.output = cur;
        Ok(trace)
    }

    /// Returns the input gradient and, per activated layer, the scale gradient.
    pub fn backward(
        &mut self,
        trace: &MlpTrace,
        upstream: &Tensor,
    ) -> Result<(Tensor, Vec<Option<Tensor>>)> {
        let n_act = self.n_activated();
        let mut dscales = vec![None; n_act];
        let mut g = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            if l < n_act {
                g = dropout_backward(trace.masks[l].as_ref(), &g)?;
                if let Some(s) = &trace.scales[l] {
                    dscales[l] = Some(g.zip_map(&trace.act[l], |a, b| a * b)?);
                    g = g.zip_map(s, |a, k| a * k)?;
                }
                g = relu_backward(&trace.pre[l], &g)?;
                if let (Some(bn), Some(t)) = (self.norms.get_mut(l), &trace.norm[l]) {
                    g = bn.backward(t, &g)?;
                }
            }
            g = self.layers[l].backward(&trace.inputs[l], &g)?;
        }
        Ok((g, dscales))
    }

    pub fn update_running(&mut self, trace: &MlpTrace) {
        for (bn, t) in self.norms.iter_mut().zip(&trace.norm) {
            if let Some(t) = t {
                bn.update_running(t);
            }
        }
    }

    /// Running statistics of every batch-norm layer, for persistence.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for bn in &mut self.norms {
            let base = bn.gamma.name.trim_end_matches(".gamma").to_string();
            out.push((format!("{base}.running_mean"), &mut bn.running_mean));
            out.push((format!("{base}.running_var"), &mut bn.running_var));
        }
        out
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.layers.iter().flat_map(|l| l.parameters()).collect();
        out.extend(self.norms.iter().flat_map(|n| n.parameters()));
        out
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect();
        out.extend(self.norms.iter_mut().flat_map(|n| n.parameters_mut()));
        out
    }
}
