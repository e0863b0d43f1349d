use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ops::sigmoid_scalar;

/// Binary cross-entropy on a logit: `max(z,0) − z·y + ln(1+e^{−|z|})`.
pub fn bce_loss(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// `∂ bce / ∂ logit = σ(z) − y`.
pub fn bce_grad(logit: f64, label: f64) -> f64 {
    sigmoid_scalar(logit) - label
}

/// Area under the ROC curve via the rank-sum statistic, ties counted ½.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc", &[scores.len()], &[labels.len()]));
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] > 0.5).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Relative improvement in percent.
pub fn rimp(auc_model: f64, auc_base: f64) -> Result<f64> {
    if !(auc_base > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "baseline AUC {auc_base} must be positive"
        )));
    }
    Ok(100.0 * (auc_model - auc_base) / auc_base)
}

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub domain: usize,
    pub auc: Option<f64>,
    pub loss: f64,
    pub mu_t: f64,
    pub sigma_t: f64,
}

pub fn write_metrics_line<W: Write>(out: &mut W, record: &MetricsRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Reads `domain_id,auc` lines (header first).
pub fn read_baseline<R: Read>(input: R) -> Result<Vec<(usize, f64)>> {
    let mut lines = BufReader::new(input).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == "domain_id,auc" => {}
        Some(Err(e)) => return Err(e.into()),
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: "expected header `domain_id,auc`".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::Parse {
            line: line_no,
            reason: reason.to_string(),
        };
        let (d, a) = line
            .split_once(',')
            .ok_or_else(|| bad("expected `domain_id,auc`"))?;
        let d = d.parse().map_err(|_| bad("domain_id is not an integer"))?;
        let a: f64 = a.parse().map_err(|_| bad("auc is not a number"))?;
        if !(0.0..=1.0).contains(&a) {
            return Err(bad("auc outside [0, 1]"));
        }
        out.push((d, a));
    }
    Ok(out)
}

pub fn write_baseline<W: Write>(mut out: W, rows: &[(usize, f64)]) -> Result<()> {
    writeln!(out, "domain_id,auc")?;
    for (d, a) in rows {
        writeln!(out, "{d},{a:?}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::relative_error;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1000.0, 1.0).abs() < 1e-300);
        assert!((bce_loss(-1000.0, 1.0) - 1000.0).abs() < 1e-9);
        for z in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            for y in [0.0, 1.0] {
                let num = (bce_loss(z + 1e-6, y) - bce_loss(z - 1e-6, y)) / 2e-6;
                assert!(relative_error(bce_grad(z, y), num) < 1e-8, "{z} {y}");
            }
        }
    }

    #[test]
    fn auc_examples() {
        let y = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &y).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.3, 0.4], &y).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &y).unwrap(), 0.5);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1.0, 1.0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn rimp_examples() {
        assert_eq!(rimp(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(
            (rimp(0.6309, 0.6276).unwrap() * 100.0).round() / 100.0,
            0.53
        );
        let r = (rimp(0.6095, 0.5530).unwrap() * 100.0).round() / 100.0;
        assert!((r - 10.23).abs() <= 0.01 + 1e-9);
        assert!(rimp(0.5, 0.0).is_err());
    }

    #[test]
    fn baseline_round_trip() {
        let rows = vec![(0, 0.6276), (3, 0.553)];
        let mut buf = Vec::new();
        write_baseline(&mut buf, &rows).unwrap();
        assert_eq!(read_baseline(buf.as_slice()).unwrap(), rows);
        assert!(read_baseline("domain_id,auc\n1,1.5\n".as_bytes()).is_err());
    }

    #[test]
    fn metrics_lines_round_trip() {
        let r = MetricsRecord {
            epoch: 2,
            domain: 4,
            auc: None,
            loss: 0.25,
            mu_t: 0.5,
            sigma_t: 0.1,
        };
        let mut buf = Vec::new();
        write_metrics_line(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "{\"epoch\":2,\"domain\":4,\"auc\":null,\"loss\":0.25,\"mu_t\":0.5,\"sigma_t\":0.1}\n"
        );
        assert_eq!(read_metrics(buf.as_slice()).unwrap(), vec![r]);
    }
}
