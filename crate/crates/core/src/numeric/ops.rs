//! Stateless forward/backward kernels.

use super::Tensor;
use crate::error::{Error, Result};

fn expect_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, t.shape(), &[0, 0]));
    }
    Ok(())
}

/// `a · b` for `a: M×K`, `b: K×P`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_matrix("matmul", a)?;
    expect_matrix("matmul", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, p) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * p];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * p..(i + 1) * p];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[kk * p..(kk + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Tensor::matrix(m, p, out)
}

/// `aᵀ · b` for `a: K×M`, `b: K×P`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_matrix("matmul_tn", a)?;
    expect_matrix("matmul_tn", b)?;
    let (k, m) = (a.rows(), a.cols());
    let (k2, p) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * p];
    let (ad, bd) = (a.data(), b.data());
    for kk in 0..k {
        let brow = &bd[kk * p..(kk + 1) * p];
        for i in 0..m {
            let aki = ad[kk * m + i];
            if aki == 0.0 {
                continue;
            }
            let orow = &mut out[i * p..(i + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
    Tensor::matrix(m, p, out)
}

/// `a · bᵀ` for `a: M×K`, `b: P×K`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_matrix("matmul_nt", a)?;
    expect_matrix("matmul_nt", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (p, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..p {
            out[i * p + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::matrix(m, p, out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of relu given the forward input. The subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    x.zip_map(upstream, |xi, g| if xi > 0.0 { g } else { 0.0 })
}

/// Branch-wise logistic function, finite for any finite input.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient of sigmoid given its forward output.
pub fn sigmoid_backward(out: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    out.zip_map(upstream, |s, g| g * s * (1.0 - s))
}

/// Row-wise softmax of a 2-D tensor, stabilised by subtracting the row max.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    expect_matrix("softmax_rows", x)?;
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Gradient of softmax given its forward output: `s ⊙ (g − ⟨g, s⟩)` per row.
pub fn softmax_rows_backward(out: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    out.expect_same_shape("softmax_rows_backward", upstream)?;
    let mut dx = Tensor::zeros(out.shape());
    for r in 0..out.rows() {
        let s = out.row(r);
        let g = upstream.row(r);
        let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
        for (d, (&si, &gi)) in dx.row_mut(r).iter_mut().zip(s.iter().zip(g)) {
            *d = si * (gi - dot);
        }
    }
    Ok(dx)
}

/// Scales row `r` of `x` by `k[r]`.
pub fn scale_rows(x: &Tensor, k: &[f64]) -> Tensor {
    let mut out = x.clone();
    for (r, &kr) in k.iter().enumerate() {
        out.row_mut(r).iter_mut().for_each(|v| *v *= kr);
    }
    out
}

/// Per-row dot product of two equally shaped matrices.
pub fn row_dots(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    a.expect_same_shape("row_dots", b)?;
    Ok((0..a.rows())
        .map(|r| a.row(r).iter().zip(b.row(r)).map(|(x, y)| x * y).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn random(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn transpose(a: &Tensor) -> Tensor {
        let mut t = Tensor::zeros(&[a.cols(), a.rows()]);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::new(1);
        let a = random(&mut rng, 4, 3);
        assert_eq!(matmul(&a, &Tensor::identity(3)).unwrap(), a);
    }

    #[test]
    fn matmul_variants_match_triple_loop() {
        let mut rng = Rng::new(7);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let oracle = triple_loop(&a, &b);
        let fast = matmul(&a, &b).unwrap();
        let tn = matmul_tn(&transpose(&a), &b).unwrap();
        let nt = matmul_nt(&a, &transpose(&b)).unwrap();
        for got in [&fast, &tn, &nt] {
            for (x, y) in got.data().iter().zip(oracle.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[vec![1000.0, 1000.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
        assert!(sigmoid_scalar(-800.0).is_finite());
    }

    fn fd_check(f: impl Fn(&Tensor) -> f64, analytic: &Tensor, x: &Tensor) -> f64 {
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            let a = analytic.data()[i];
            worst = worst.max((a - num).abs() / (a.abs() + num.abs()).max(1e-8));
        }
        worst
    }

    #[test]
    fn activation_backwards_match_finite_differences() {
        let mut rng = Rng::new(3);
        let x = random(&mut rng, 3, 4);
        let g = random(&mut rng, 3, 4);
        let dot = |t: &Tensor| {
            t.data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };

        let d = sigmoid_backward(&sigmoid(&x), &g).unwrap();
        assert!(fd_check(|t| dot(&sigmoid(t)), &d, &x) < 1e-6);

        let d = softmax_rows_backward(&softmax_rows(&x).unwrap(), &g).unwrap();
        assert!(fd_check(|t| dot(&softmax_rows(t).unwrap()), &d, &x) < 1e-6);

        let d = relu_backward(&x, &g).unwrap();
        assert!(fd_check(|t| dot(&relu(t)), &d, &x) < 1e-6);
    }
}
