//! Domain differentiation: per-layer scale vectors from the hard domain
//! embedding and the classifier-weighted soft domain embedding.

use crate::error::{Error, Result};
use crate::numeric::ops::{matmul, matmul_tn, relu, relu_backward, sigmoid_scalar};
use crate::numeric::{Linear, Module, Parameter, Tensor};

/// `δ · sigmoid(FC(relu(FC(x))))`, bounded in `(0, δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffNet {
    pub fc1: Linear,
    pub fc2: Linear,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct DnTrace {
    x: Tensor,
    a1: Tensor,
    h1: Tensor,
    sig: Tensor,
    pub gamma: Tensor,
}

impl DiffNet {
    /// Hidden width is half the input width, at least 4. The output layer
    /// starts at zero so the initial scale is `δ/2` everywhere.
    pub fn new(prefix: &str, input: usize, output: usize, delta: f64, seed: u64) -> Self {
        let hidden = (input / 2).max(4);
        Self {
            fc1: Linear::new(&format!("{prefix}.fc1"), input, hidden, seed),
            fc2: Linear::zeroed(&format!("{prefix}.fc2"), hidden, output),
            delta,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<DnTrace> {
        let a1 = self.fc1.forward(x)?;
        let h1 = relu(&a1);
        let sig = self.fc2.forward(&h1)?.map(sigmoid_scalar);
        let gamma = sig.map(|s| self.delta * s);
        Ok(DnTrace {
            x: x.clone(),
            a1,
            h1,
            sig,
            gamma,
        })
    }

    pub fn backward(&mut self, trace: &DnTrace, dgamma: &Tensor) -> Result<Tensor> {
        let delta = self.delta;
        let du = trace
            .sig
            .zip_map(dgamma, |s, g| g * delta * s * (1.0 - s))?;
        let dh1 = self.fc2.backward(&trace.h1, &du)?;
        let da1 = relu_backward(&trace.a1, &dh1)?;
        self.fc1.backward(&trace.x, &da1)
    }
}

impl Module for DiffNet {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.fc1.parameters();
        p.extend(self.fc2.parameters());
        p
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.fc1.parameters_mut();
        p.extend(self.fc2.parameters_mut());
        p
    }
}

/// Combined scale `sqrt(γ_d ⊙ γ_w)`.
pub fn scale_vector(gamma_d: &Tensor, gamma_w: &Tensor) -> Result<Tensor> {
    if gamma_d
        .data()
        .iter()
        .chain(gamma_w.data())
        .any(|&g| !(g > 0.0))
    {
        return Err(Error::Numeric(
            "scale vectors must be strictly positive".into(),
        ));
    }
    gamma_d.zip_map(gamma_w, |a, b| (a * b).sqrt())
}

/// Splits a gradient w.r.t. the combined scale into gradients w.r.t. both factors.
pub fn scale_vector_backward(
    gamma_d: &Tensor,
    gamma_w: &Tensor,
    scale: &Tensor,
    dscale: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let half = dscale.zip_map(scale, |g, s| 0.5 * g / s)?;
    Ok((
        half.zip_map(gamma_w, |h, w| h * w)?,
        half.zip_map(gamma_d, |h, d| h * d)?,
    ))
}

/// `h = sqrt(γ_d ⊙ γ_w) ⊙ h′`.
pub fn sddn_scale(gamma_d: &Tensor, gamma_w: &Tensor, hidden: &Tensor) -> Result<Tensor> {
    scale_vector(gamma_d, gamma_w)?.zip_map(hidden, |s, h| s * h)
}

/// Gradients of [`sddn_scale`] w.r.t. `(γ_d, γ_w, h′)`.
pub fn sddn_scale_backward(
    gamma_d: &Tensor,
    gamma_w: &Tensor,
    hidden: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let s = scale_vector(gamma_d, gamma_w)?;
    let dh = upstream.zip_map(&s, |g, k| g * k)?;
    let ds = upstream.zip_map(hidden, |g, h| g * h)?;
    let (dd, dw) = scale_vector_backward(gamma_d, gamma_w, &s, &ds)?;
    Ok((dd, dw, dh))
}

/// Probability-weighted sum of the non-dominant domain embeddings (table rows `1..N`).
pub fn soft_domain_embedding(p: &Tensor, domain_table: &Tensor) -> Result<Tensor> {
    let n = domain_table.rows();
    if p.cols() + 1 != n {
        return Err(Error::shape(
            "soft_domain_embedding",
            p.shape(),
            domain_table.shape(),
        ));
    }
    for r in 0..p.rows() {
        let row = p.row(r);
        let total: f64 = row.iter().sum();
        if row.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "soft-partition row {r} is not a distribution (sum {total})"
            )));
        }
    }
    matmul(p, &non_dominant_rows(domain_table))
}

/// Gradient of [`soft_domain_embedding`] w.r.t. the full domain table (row 0 untouched).
pub fn soft_domain_embedding_backward(
    p: &Tensor,
    upstream: &Tensor,
    table_shape: &[usize],
) -> Result<Tensor> {
    let partial = matmul_tn(p, upstream)?;
    let mut full = Tensor::zeros(table_shape);
    let d = full.cols();
    full.data_mut()[d..].copy_from_slice(partial.data());
    Ok(full)
}

fn non_dominant_rows(table: &Tensor) -> Tensor {
    let idx: Vec<usize> = (1..table.rows()).collect();
    table.gather_rows(&idx)
}
