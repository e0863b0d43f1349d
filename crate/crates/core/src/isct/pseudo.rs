use std::io::{BufRead, BufReader, Read, Write};

use super::{DomainClassifier, GaussianWeightState};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

const HEADER: &str = "#ssctl-pseudo v1";

/// A dominant-domain row relabelled with a non-dominant domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoRecord {
    pub sample_index: usize,
    pub pseudo_domain: usize,
    pub confidence: f64,
    pub weight: f64,
}

/// `(k*, c)`: the domain of the most probable class (first on ties) and its probability.
pub fn argmax_confidence(p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    (best + 1, p[best])
}

/// Records for `rows` given their class distributions (one row of `probs` each).
pub fn pseudo_label_from_probs(
    rows: &[usize],
    probs: &Tensor,
    state: &GaussianWeightState,
) -> Result<Vec<PseudoRecord>> {
    if probs.rows() != rows.len() {
        return Err(Error::shape("pseudo_label", &[rows.len()], probs.shape()));
    }
    Ok(rows
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            let (k, c) = argmax_confidence(probs.row(r));
            PseudoRecord {
                sample_index: i,
                pseudo_domain: k,
                confidence: c,
                weight: state.weight(c),
            }
        })
        .collect())
}

/// Labels every row in `x_d` with the frozen classifier.
pub fn pseudo_label(
    classifier: &DomainClassifier,
    dataset: &Dataset,
    x_d: &[usize],
    state: &GaussianWeightState,
) -> Result<Vec<PseudoRecord>> {
    if !classifier.is_frozen() {
        return Err(Error::Validation(
            "pseudo-labelling needs a frozen classifier".into(),
        ));
    }
    if classifier
        .schema
        .feature_fields()
        .ne(dataset.schema.feature_fields())
        || classifier.schema.n_domains() != dataset.schema.n_domains()
    {
        return Err(Error::Validation(
            "classifier schema does not match the dataset".into(),
        ));
    }
    let mut out = Vec::with_capacity(x_d.len());
    for chunk in x_d.chunks(4096) {
        let probs = classifier.predict_proba(&Batch::from_rows(dataset, chunk))?;
        out.extend(pseudo_label_from_probs(chunk, &probs, state)?);
    }
    Ok(out)
}

/// Writes `index<TAB>domain<TAB>confidence` lines; weights are not stored.
pub fn write_pseudo<W: Write>(records: &[PseudoRecord], mut out: W) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{:?}",
            r.sample_index, r.pseudo_domain, r.confidence
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a pseudo-label file, computing weights from `state`.
pub fn read_pseudo<R: Read>(
    input: R,
    n_domains: usize,
    state: &GaussianWeightState,
) -> Result<Vec<PseudoRecord>> {
    let mut lines = BufReader::new(input).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == HEADER => {}
        Some(Err(e)) => return Err(e.into()),
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected header `{HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            line: line_no,
            reason,
        };
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 {
            return Err(bad(format!(
                "expected 3 tab-separated fields, found {}",
                cells.len()
            )));
        }
        let sample_index = cells[0]
            .parse()
            .map_err(|_| bad(format!("bad sample index `{}`", cells[0])))?;
        let pseudo_domain: usize = cells[1]
            .parse()
            .map_err(|_| bad(format!("bad domain `{}`", cells[1])))?;
        if pseudo_domain == 0 || pseudo_domain >= n_domains {
            return Err(bad(format!(
                "pseudo domain {pseudo_domain} outside 1..{n_domains}"
            )));
        }
        let confidence: f64 = cells[2]
            .parse()
            .map_err(|_| bad(format!("bad confidence `{}`", cells[2])))?;
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(bad(format!("confidence {confidence} outside (0, 1]")));
        }
        out.push(PseudoRecord {
            sample_index,
            pseudo_domain,
            confidence,
            weight: state.weight(confidence),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticConfig};
    use crate::isct::{partition, train_classifier, ClassifierConfig};

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_confidence(&[0.2, 0.5, 0.3]), (2, 0.5));
        assert_eq!(argmax_confidence(&[0.5, 0.5]), (1, 0.5));
    }

    #[test]
    fn positive_logit_scaling_keeps_labels() {
        let z = Tensor::from_rows(&[vec![0.3, -1.2, 0.9], vec![2.0, 2.0, -5.0]]).unwrap();
        let base = crate::numeric::ops::softmax_rows(&z).unwrap();
        for k in [0.1, 3.0, 40.0] {
            let s = crate::numeric::ops::softmax_rows(&z.map(|v| v * k)).unwrap();
            for r in 0..2 {
                assert_eq!(
                    argmax_confidence(s.row(r)).0,
                    argmax_confidence(base.row(r)).0
                );
            }
        }
    }

    #[test]
    fn records_match_loop_oracle_and_round_trip() {
        let cfg = SyntheticConfig {
            n_samples: 4000,
            ..SyntheticConfig::separable()
        };
        let ds = generate(&cfg).unwrap();
        let (xd, xo) = partition(&ds);
        let clf_cfg = ClassifierConfig {
            hidden: vec![8],
            epochs: 1,
            ..ClassifierConfig::default()
        };
        let (clf, _) = train_classifier(&ds, &xo, &clf_cfg).unwrap();
        let state = GaussianWeightState::new(3, 0.999).unwrap();
        let recs = pseudo_label(&clf, &ds, &xd, &state).unwrap();
        assert_eq!(recs.len(), xd.len());
        for (rec, &i) in recs.iter().zip(&xd).step_by(37) {
            let p = clf.predict_proba(&Batch::from_rows(&ds, &[i])).unwrap();
            let row = p.row(0);
            let mut best = 0;
            for j in 0..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            assert_eq!(rec.sample_index, i);
            assert_eq!(rec.pseudo_domain, best + 1);
            assert_eq!(rec.confidence, row[best]);
            assert_eq!(rec.weight, state.weight(row[best]));
        }
        assert!(recs.iter().all(|r| r.pseudo_domain != 0));

        let mut buf = Vec::new();
        write_pseudo(&recs, &mut buf).unwrap();
        let back = read_pseudo(buf.as_slice(), 3, &state).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn unfrozen_classifier_rejected() {
        let ds = generate(&SyntheticConfig {
            n_samples: 200,
            ..SyntheticConfig::separable()
        })
        .unwrap();
        let clf = DomainClassifier::new(&ds.schema, &[4], 0).unwrap();
        let state = GaussianWeightState::new(3, 0.9).unwrap();
        assert!(pseudo_label(&clf, &ds, &[0], &state).is_err());
    }

    #[test]
    fn malformed_files_rejected() {
        let state = GaussianWeightState::new(3, 0.9).unwrap();
        assert!(read_pseudo("nope\n".as_bytes(), 3, &state).is_err());
        let e = read_pseudo("#ssctl-pseudo v1\n4\t0\t0.5\n".as_bytes(), 3, &state).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(read_pseudo("#ssctl-pseudo v1\n4\t1\t1.5\n".as_bytes(), 3, &state).is_err());
    }
}
