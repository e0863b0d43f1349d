use super::ops::{matmul, matmul_nt, matmul_tn};
use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Glorot-uniform matrix in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(name, &[fan_in, fan_out], bound, rng)
    }

    pub fn uniform(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        Self::new(
            name,
            Tensor::new(shape.to_vec(), data).expect("shape product"),
        )
    }
}

/// Anything that owns parameters, visited in a fixed order.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        self.parameters_mut()
            .into_iter()
            .for_each(Parameter::zero_grad);
    }
}

/// Fully connected layer `y = x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize, seed: u64) -> Self {
        let mut rng = Rng::substream(seed, &format!("{prefix}.weight"), 0);
        Self {
            weight: Parameter::glorot(format!("{prefix}.weight"), fan_in, fan_out, &mut rng),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn zeroed(prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Parameter::new(
                format!("{prefix}.weight"),
                Tensor::zeros(&[fan_in, fan_out]),
            ),
            bias: Parameter::new(format!("{prefix}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.weight.value)?;
        let b = self.bias.value.data();
        for r in 0..y.rows() {
            for (v, bi) in y.row_mut(r).iter_mut().zip(b) {
                *v += bi;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    pub fn backward(&mut self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        if upstream.cols() != self.out_dim() || upstream.rows() != x.rows() {
            return Err(Error::shape("linear_backward", x.shape(), upstream.shape()));
        }
        let dw = matmul_tn(x, upstream)?;
        self.weight.grad.add_assign(&dw)?;
        let db = self.bias.grad.data_mut();
        for r in 0..upstream.rows() {
            for (g, u) in db.iter_mut().zip(upstream.row(r)) {
                *g += u;
            }
        }
        matmul_nt(upstream, &self.weight.value)
    }
}

impl Module for Linear {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Lookup table for one categorical field.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub field: String,
    pub table: Parameter,
}

impl Embedding {
    pub fn new(prefix: &str, field: &str, vocab: usize, dim: usize, seed: u64) -> Self {
        let name = format!("{prefix}.{field}");
        let mut rng = Rng::substream(seed, &name, 0);
        Self {
            field: field.to_string(),
            table: Parameter::uniform(name, &[vocab, dim], 0.01, &mut rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    fn check(&self, ids: &[usize]) -> Result<()> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab()) {
            return Err(Error::Index {
                field: self.field.clone(),
                id,
                vocab: self.vocab(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        self.check(ids)?;
        Ok(self.table.value.gather_rows(ids))
    }

    /// Adds each upstream row into the gradient row of its id; duplicates accumulate.
    pub fn backward(&mut self, ids: &[usize], upstream: &Tensor) -> Result<()> {
        self.check(ids)?;
        if upstream.rows() != ids.len() || upstream.cols() != self.dim() {
            return Err(Error::shape(
                "embedding_backward",
                &[ids.len(), self.dim()],
                upstream.shape(),
            ));
        }
        for (k, &id) in ids.iter().enumerate() {
            for (g, u) in self.table.grad.row_mut(id).iter_mut().zip(upstream.row(k)) {
                *g += u;
            }
        }
        Ok(())
    }
}

impl Module for Embedding {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.table]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.table]
    }
}

/// Inverted dropout. Returns the output and, in training mode, the scaled mask.
pub fn dropout(
    x: &Tensor,
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(
            "dropout",
            format!("rate must be in [0, 1), got {rate}"),
        ));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = x.map(|_| if rng.unit() < rate { 0.0 } else { keep });
    let y = x.zip_map(&mask, |a, m| a * m)?;
    Ok((y, Some(mask)))
}

pub fn dropout_backward(mask: Option<&Tensor>, upstream: &Tensor) -> Result<Tensor> {
    match mask {
        Some(m) => upstream.zip_map(m, |g, k| g * k),
        None => Ok(upstream.clone()),
    }
}

/// Batch normalisation over the rows of a matrix with affine output.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormTrace {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    training: bool,
}

impl BatchNorm {
    pub fn new(prefix: &str, width: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::full(&[width], 1.0)),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[width])),
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::full(&[width], 1.0),
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<(Tensor, BatchNormTrace)> {
        let (n, w) = (x.rows(), x.cols());
        if w != self.gamma.value.len() {
            return Err(Error::shape(
                "batch_norm",
                x.shape(),
                self.gamma.value.shape(),
            ));
        }
        let (mean, var) = if training && n > 0 {
            let mut mean = vec![0.0; w];
            let mut var = vec![0.0; w];
            for r in 0..n {
                for (m, v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            for r in 0..n {
                for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = x.clone();
        for r in 0..n {
            for ((v, m), s) in x_hat.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut y = x_hat.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..n {
            for ((v, gi), bi) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        Ok((
            y,
            BatchNormTrace {
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                training,
            },
        ))
    }

    /// Folds a training batch's statistics into the running estimates.
    pub fn update_running(&mut self, trace: &BatchNormTrace) {
        if !trace.training {
            return;
        }
        let m = self.momentum;
        for (r, b) in self
            .running_mean
            .data_mut()
            .iter_mut()
            .zip(&trace.batch_mean)
        {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&trace.batch_var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    pub fn backward(&mut self, trace: &BatchNormTrace, upstream: &Tensor) -> Result<Tensor> {
        trace
            .x_hat
            .expect_same_shape("batch_norm_backward", upstream)?;
        let (n, w) = (upstream.rows(), upstream.cols());
        let mut dgamma = vec![0.0; w];
        let mut dbeta = vec![0.0; w];
        for r in 0..n {
            for c in 0..w {
                let g = upstream.get(r, c);
                dgamma[c] += g * trace.x_hat.get(r, c);
                dbeta[c] += g;
            }
        }
        for (a, b) in self.gamma.grad.data_mut().iter_mut().zip(&dgamma) {
            *a += b;
        }
        for (a, b) in self.beta.grad.data_mut().iter_mut().zip(&dbeta) {
            *a += b;
        }
        let gamma = self.gamma.value.data();
        let mut dx = Tensor::zeros(upstream.shape());
        let nf = n as f64;
        for c in 0..w {
            let k = gamma[c] * trace.inv_std[c];
            for r in 0..n {
                let g = upstream.get(r, c);
                let v = if trace.training {
                    k * (g - dbeta[c] / nf - trace.x_hat.get(r, c) * dgamma[c] / nf)
                } else {
                    k * g
                };
                dx.set(r, c, v);
            }
        }
        Ok(dx)
    }
}

impl Module for BatchNorm {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
