use log::warn;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratify_by_domain: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            stratify_by_domain: true,
            seed: 7,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(
                    format!("split.{name}"),
                    format!("fraction must lie in (0, 1), got {v}"),
                ));
            }
        }
        let total = self.train + self.val + self.test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split",
                format!("fractions must sum to 1, got {total}"),
            ));
        }
        Ok(())
    }
}

fn take(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction + 1e-9).floor() as usize
}

/// Row indices for train, validation and test.
///
/// Each group (a domain, or the whole set) is shuffled and cut by the floor
/// rule with the remainder going to train. Groups smaller than three rows
/// go entirely to train.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let groups: Vec<Vec<usize>> = if spec.stratify_by_domain {
        let mut g = vec![Vec::new(); dataset.schema.n_domains()];
        for (i, r) in dataset.rows.iter().enumerate() {
            g[r.domain].push(i);
        }
        g
    } else {
        vec![(0..dataset.len()).collect()]
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (gi, mut group) in groups.into_iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        if group.len() < 3 {
            warn!("group {gi} has {} rows; all assigned to train", group.len());
            train.extend(group);
            continue;
        }
        Rng::substream(spec.seed, "split", gi as u64).shuffle(&mut group);
        let n = group.len();
        let (nv, nt) = (take(n, spec.val), take(n, spec.test));
        val.extend_from_slice(&group[..nv]);
        test.extend_from_slice(&group[nv..nv + nt]);
        train.extend_from_slice(&group[nv + nt..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}
