use super::{Module, Rng};
use crate::error::{Error, Result};

/// Largest relative error per parameter, in visiting order.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn failing(&self, tol: f64) -> Vec<&str> {
        self.per_param
            .iter()
            .filter(|(_, e)| !(*e < tol))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences.
///
/// `loss_and_grad` must zero the gradients, return the loss and leave the
/// analytic gradient in every parameter. At most `max_coords` coordinates per
/// parameter are probed, chosen with `seed`.
pub fn grad_check<M: Module + ?Sized>(
    model: &mut M,
    loss_and_grad: impl FnMut(&mut M) -> Result<f64>,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    grad_check_scaled(model, loss_and_grad, epsilon, max_coords, seed, 1.0)
}

/// As [`grad_check`], with the analytic gradient multiplied by `corruption`
/// before comparison. Used to confirm the checker detects a wrong gradient.
pub fn grad_check_scaled<M: Module + ?Sized>(
    model: &mut M,
    mut loss_and_grad: impl FnMut(&mut M) -> Result<f64>,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
    corruption: f64,
) -> Result<GradCheckReport> {
    let base = loss_and_grad(model)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {base}")));
    }
    let analytic: Vec<Vec<f64>> = model
        .parameters()
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g * corruption).collect())
        .collect();
    let n_params = analytic.len();

    let mut per_param = Vec::with_capacity(n_params);
    let mut max_rel_err: f64 = 0.0;
    for pi in 0..n_params {
        let (name, len) = {
            let params = model.parameters();
            (params[pi].name.clone(), params[pi].value.len())
        };
        let coords = if len <= max_coords {
            (0..len).collect()
        } else {
            let mut rng = Rng::substream(seed, &name, 0);
            let mut c = rng.choose_distinct(len, max_coords);
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for ci in coords {
            let original = model.parameters()[pi].value.data()[ci];
            model.parameters_mut()[pi].value.data_mut()[ci] = original + epsilon;
            let plus = loss_and_grad(model)?;
            model.parameters_mut()[pi].value.data_mut()[ci] = original - epsilon;
            let minus = loss_and_grad(model)?;
            model.parameters_mut()[pi].value.data_mut()[ci] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss probing {name}[{ci}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[pi][ci], numeric));
        }
        max_rel_err = max_rel_err.max(worst);
        per_param.push((name, worst));
    }
    // Leave the model holding the true analytic gradients.
    loss_and_grad(model)?;
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
    })
}
