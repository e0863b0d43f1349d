//! Datasets, the synthetic multi-domain click generator, CSV IO, splitting and batching.
//!
//! Domain 0 is always the dominant domain.

mod csv;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;

pub use self::csv::{load_csv, read_csv, write_csv, write_csv_to};
pub use split::{split, SplitSpec};
pub use synthetic::{generate, generate_with_report, GenerationReport, SyntheticConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Field {
    pub name: String,
    pub vocab: usize,
}

impl Field {
    pub fn new(name: &str, vocab: usize) -> Self {
        Self {
            name: name.to_string(),
            vocab,
        }
    }
}

/// Categorical layout: general and contextual fields feed the experts,
/// contextual and domain fields feed the gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub general_fields: Vec<Field>,
    pub contextual_fields: Vec<Field>,
    pub domain_field: Field,
    pub embedding_dim: usize,
}

impl FeatureSchema {
    pub fn n_domains(&self) -> usize {
        self.domain_field.vocab
    }

    /// Per-row feature columns: general fields followed by contextual fields.
    pub fn feature_fields(&self) -> impl Iterator<Item = &Field> {
        self.general_fields.iter().chain(&self.contextual_fields)
    }

    pub fn n_features(&self) -> usize {
        self.general_fields.len() + self.contextual_fields.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self
            .feature_fields()
            .chain(std::iter::once(&self.domain_field))
            .map(|f| f.name.as_str())
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(w[0], "field name used twice"));
        }
        for f in self
            .feature_fields()
            .chain(std::iter::once(&self.domain_field))
        {
            if f.vocab == 0 {
                return Err(Error::config(&f.name, "vocabulary must be positive"));
            }
            if f.name == "domain_id" || f.name == "label" {
                return Err(Error::config(&f.name, "reserved column name"));
            }
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim", "must be positive"));
        }
        Ok(())
    }

    pub fn with_embedding_dim(&self, dim: usize) -> Self {
        Self {
            embedding_dim: dim,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub domain: usize,
    pub label: u8,
    /// One id per feature field, in [`FeatureSchema::feature_fields`] order.
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub rows: Vec<Row>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Row>) -> Self {
        Self {
            schema,
            rows,
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn domain_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.n_domains()];
        for r in &self.rows {
            counts[r.domain] += 1;
        }
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn positive_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.label == 1).count() as f64 / self.rows.len() as f64
    }
}

/// A minibatch in columnar form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Source row index of each sample.
    pub rows: Vec<usize>,
    /// `ids[f][b]`: id of feature field `f` for sample `b`.
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
    /// Domain used for routing and for the domain-indicator embedding.
    pub domains: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn from_rows(dataset: &Dataset, idx: &[usize]) -> Self {
        let nf = dataset.schema.n_features();
        let mut ids = vec![Vec::with_capacity(idx.len()); nf];
        let mut labels = Vec::with_capacity(idx.len());
        let mut domains = Vec::with_capacity(idx.len());
        for &i in idx {
            let row = &dataset.rows[i];
            for (col, &id) in ids.iter_mut().zip(&row.ids) {
                col.push(id);
            }
            labels.push(f64::from(row.label));
            domains.push(row.domain);
        }
        Self {
            rows: idx.to_vec(),
            ids,
            labels,
            domains,
            weights: vec![1.0; idx.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self, n_domains: usize) -> Result<()> {
        let b = self.len();
        if self.rows.len() != b
            || self.domains.len() != b
            || self.weights.len() != b
            || self.ids.iter().any(|c| c.len() != b)
        {
            return Err(Error::Validation("batch columns differ in length".into()));
        }
        if let Some(&d) = self.domains.iter().find(|&&d| d >= n_domains) {
            return Err(Error::Index {
                field: "domain_id".into(),
                id: d,
                vocab: n_domains,
            });
        }
        if let Some(w) = self.weights.iter().find(|&&w| !(w > 0.0 && w <= 1.0)) {
            return Err(Error::Validation(format!(
                "sample weight {w} outside (0, 1]"
            )));
        }
        Ok(())
    }

    /// Samples at positions `pos`, in that order.
    pub fn select(&self, pos: &[usize]) -> Batch {
        Batch {
            rows: pos.iter().map(|&p| self.rows[p]).collect(),
            ids: self
                .ids
                .iter()
                .map(|c| pos.iter().map(|&p| c[p]).collect())
                .collect(),
            labels: pos.iter().map(|&p| self.labels[p]).collect(),
            domains: pos.iter().map(|&p| self.domains[p]).collect(),
            weights: pos.iter().map(|&p| self.weights[p]).collect(),
        }
    }
}

/// Seeded permutation of `idx`, cut into batches of `batch_size` (last one short).
pub fn batch_indices(
    idx: &[usize],
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let mut order = idx.to_vec();
    Rng::new(shuffle_seed).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Batches over every row of `dataset`, with sample weights set to 1.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Batch>> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    Ok(batch_indices(&all, batch_size, shuffle_seed)?
        .iter()
        .map(|b| Batch::from_rows(dataset, b))
        .collect())
}

#[cfg(test)]
pub(crate) fn toy_schema(n_domains: usize) -> FeatureSchema {
    FeatureSchema {
        general_fields: vec![Field::new("user_group", 4), Field::new("item_category", 5)],
        contextual_fields: vec![Field::new("time_slot", 3)],
        domain_field: Field::new("domain", n_domains),
        embedding_dim: 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let rows = (0..n)
            .map(|i| Row {
                domain: i % 3,
                label: (i % 2) as u8,
                ids: vec![i % 4, i % 5, i % 3],
            })
            .collect();
        Dataset::new(toy_schema(3), rows)
    }

    #[test]
    fn batches_of_4_4_2() {
        let ds = toy(10);
        let sizes: Vec<usize> = batch_iter(&ds, 4, 1)
            .unwrap()
            .iter()
            .map(Batch::len)
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn same_seed_same_order_and_weights_one() {
        let ds = toy(10);
        let a = batch_iter(&ds, 3, 9).unwrap();
        let b = batch_iter(&ds, 3, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|b| b.weights.iter().all(|&w| w == 1.0)));
    }

    #[test]
    fn concatenated_batches_are_the_seeded_permutation() {
        let ds = toy(23);
        let got: Vec<usize> = batch_iter(&ds, 5, 77)
            .unwrap()
            .into_iter()
            .flat_map(|b| b.rows)
            .collect();
        let oracle = Rng::new(77).permutation(23);
        // `permutation` shuffles 0..n exactly as batch_indices does.
        assert_eq!(got, oracle);
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batch_iter(&toy(3), 0, 0).is_err());
    }

    #[test]
    fn duplicate_field_names_rejected() {
        let mut s = toy_schema(3);
        s.contextual_fields.push(Field::new("user_group", 2));
        assert!(s.validate().is_err());
    }

    #[test]
    fn batch_validation() {
        let ds = toy(4);
        let mut b = Batch::from_rows(&ds, &[0, 1, 2]);
        assert!(b.validate(3).is_ok());
        b.weights[1] = 0.0;
        assert!(b.validate(3).is_err());
        b.weights[1] = 1.0;
        b.domains[0] = 3;
        assert!(b.validate(3).is_err());
    }
}
