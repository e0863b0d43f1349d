use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, FeatureSchema, Field, Provenance, Row};
use crate::error::{Error, Result};
use crate::numeric::ops::sigmoid_scalar;
use crate::numeric::Rng;

/// Raw traffic shares of the six surfaces in the reference deployment. They sum
/// to 100.04 and are renormalised by [`SyntheticConfig::six_domain`].
const SIX_DOMAIN_SHARES: [f64; 6] = [81.16, 12.57, 3.52, 1.14, 1.06, 0.59];
const SIX_DOMAIN_ITEM_OVERLAP: [f64; 5] = [0.8261, 0.8575, 0.7493, 0.7500, 0.7453];
const SIX_DOMAIN_USER_OVERLAP: [f64; 5] = [0.9097, 0.9196, 0.9370, 0.9912, 0.9872];

fn default_user_groups() -> usize {
    50
}
fn default_item_categories() -> usize {
    30
}
fn default_time_slots() -> usize {
    10
}
fn default_pool_fraction() -> f64 {
    0.3
}
fn default_context_strength() -> f64 {
    0.5
}
fn default_base_logit() -> f64 {
    -1.0
}
fn default_embedding_dim() -> usize {
    10
}

/// Latent-factor click generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_domains: usize,
    /// Share of impressions per domain; domain 0 is dominant.
    pub proportions: Vec<f64>,
    pub n_users: usize,
    pub n_items: usize,
    /// Fraction of each non-dominant domain's user pool shared with domain 0.
    pub user_overlap: Vec<f64>,
    pub item_overlap: Vec<f64>,
    pub latent_dim: usize,
    /// Norm of the per-domain item shift, in logit units.
    pub domain_shift_scale: f64,
    /// Standard deviation of the logit noise.
    pub click_noise: f64,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_user_groups")]
    pub n_user_groups: usize,
    #[serde(default = "default_item_categories")]
    pub n_item_categories: usize,
    #[serde(default = "default_time_slots")]
    pub n_time_slots: usize,
    /// Size of a non-dominant domain's user/item pool relative to domain 0's.
    #[serde(default = "default_pool_fraction")]
    pub pool_fraction: f64,
    /// Mixing weight toward each non-dominant domain's preferred time slots.
    #[serde(default = "default_context_strength")]
    pub context_domain_strength: f64,
    #[serde(default = "default_base_logit")]
    pub base_logit: f64,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::six_domain()
    }
}

impl SyntheticConfig {
    /// Six domains with the reference traffic shares and overlap rates.
    pub fn six_domain() -> Self {
        let total: f64 = SIX_DOMAIN_SHARES.iter().sum();
        Self {
            n_domains: 6,
            proportions: SIX_DOMAIN_SHARES.iter().map(|s| s / total).collect(),
            n_users: 5000,
            n_items: 2000,
            user_overlap: SIX_DOMAIN_USER_OVERLAP.to_vec(),
            item_overlap: SIX_DOMAIN_ITEM_OVERLAP.to_vec(),
            latent_dim: 8,
            domain_shift_scale: 0.2,
            click_noise: 0.5,
            n_samples: 100_000,
            seed: 42,
            n_user_groups: default_user_groups(),
            n_item_categories: default_item_categories(),
            n_time_slots: default_time_slots(),
            pool_fraction: default_pool_fraction(),
            context_domain_strength: default_context_strength(),
            base_logit: default_base_logit(),
            embedding_dim: default_embedding_dim(),
        }
    }

    /// Domains are almost fully identified by the time slot and strongly shifted.
    pub fn separable() -> Self {
        Self {
            n_domains: 3,
            proportions: vec![0.6, 0.2, 0.2],
            user_overlap: vec![0.9, 0.9],
            item_overlap: vec![0.8, 0.8],
            domain_shift_scale: 2.0,
            n_samples: 20_000,
            n_time_slots: 4,
            context_domain_strength: 0.99,
            ..Self::six_domain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_domains;
        if n == 0 {
            return Err(Error::config("n_domains", "must be at least 1"));
        }
        if self.proportions.len() != n {
            return Err(Error::config(
                "proportions",
                format!("expected {n} entries, got {}", self.proportions.len()),
            ));
        }
        let total: f64 = self.proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "proportions",
                format!("must sum to 1, got {total}"),
            ));
        }
        if self.proportions.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::config("proportions", "entries must be positive"));
        }
        for (name, rates) in [
            ("user_overlap", &self.user_overlap),
            ("item_overlap", &self.item_overlap),
        ] {
            if rates.len() != n - 1 {
                return Err(Error::config(name, format!("expected {} entries", n - 1)));
            }
            if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::config(name, "rates must lie in [0, 1]"));
            }
        }
        let positive = [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("latent_dim", self.latent_dim),
            ("n_user_groups", self.n_user_groups),
            ("n_item_categories", self.n_item_categories),
            ("n_time_slots", self.n_time_slots),
            ("embedding_dim", self.embedding_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.n_samples < n {
            return Err(Error::config(
                "n_samples",
                "must cover every domain at least once",
            ));
        }
        if !(self.pool_fraction > 0.0 && self.pool_fraction <= 1.0) {
            return Err(Error::config("pool_fraction", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.context_domain_strength) {
            return Err(Error::config(
                "context_domain_strength",
                "must lie in [0, 1]",
            ));
        }
        if !(self.domain_shift_scale >= 0.0 && self.domain_shift_scale.is_finite()) {
            return Err(Error::config(
                "domain_shift_scale",
                "must be finite and non-negative",
            ));
        }
        if !(self.click_noise >= 0.0 && self.click_noise.is_finite()) {
            return Err(Error::config(
                "click_noise",
                "must be finite and non-negative",
            ));
        }
        if !self.base_logit.is_finite() {
            return Err(Error::config("base_logit", "must be finite"));
        }
        for (name, pool, base, rates) in [
            (
                "user_overlap",
                self.user_pool_size(),
                self.n_users,
                &self.user_overlap,
            ),
            (
                "item_overlap",
                self.item_pool_size(),
                self.n_items,
                &self.item_overlap,
            ),
        ] {
            for r in rates {
                let shared = (r * pool as f64).round() as usize;
                if shared > base {
                    return Err(Error::config(
                        name,
                        format!("needs {shared} shared ids but the dominant pool has {base}"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn user_pool_size(&self) -> usize {
        ((self.pool_fraction * self.n_users as f64).round() as usize).max(1)
    }

    fn item_pool_size(&self) -> usize {
        ((self.pool_fraction * self.n_items as f64).round() as usize).max(1)
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            general_fields: vec![
                Field::new("user_group", self.n_user_groups),
                Field::new("item_category", self.n_item_categories),
            ],
            contextual_fields: vec![Field::new("time_slot", self.n_time_slots)],
            domain_field: Field::new("domain", self.n_domains),
            embedding_dim: self.embedding_dim,
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Realised pool overlaps with domain 0, one entry per non-dominant domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub user_overlap: Vec<f64>,
    pub item_overlap: Vec<f64>,
}

struct Entity {
    group: usize,
    latent: Vec<f64>,
}

fn centers(rng: &mut Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let s = 1.0 / (dim as f64).sqrt();
    (0..count)
        .map(|_| (0..dim).map(|_| rng.normal() * s).collect())
        .collect()
}

fn entity(rng: &mut Rng, centers: &[Vec<f64>]) -> Entity {
    let group = rng.below(centers.len());
    let s = 0.3 / (centers[0].len() as f64).sqrt();
    Entity {
        group,
        latent: centers[group]
            .iter()
            .map(|c| c + s * rng.normal())
            .collect(),
    }
}

/// Builds the per-domain pools. Pool 0 is every base entity; pool k shares
/// `round(rate·size)` members with it and fills the rest with fresh entities.
fn pools(
    rng: &mut Rng,
    entities: &mut Vec<Entity>,
    centers: &[Vec<f64>],
    base: usize,
    size: usize,
    rates: &[f64],
) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut out = vec![(0..base).collect::<Vec<_>>()];
    let mut realised = Vec::with_capacity(rates.len());
    for &rate in rates {
        let shared = (rate * size as f64).round() as usize;
        let mut pool = rng.choose_distinct(base, shared);
        for _ in shared..size {
            pool.push(entities.len());
            entities.push(entity(rng, centers));
        }
        realised.push(shared as f64 / size as f64);
        out.push(pool);
    }
    (out, realised)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    generate_with_report(config).map(|(d, _)| d)
}

/// Latent-factor click log.
///
/// Users and items get latent vectors clustered around their group/category
/// centre; each non-dominant domain shifts item latents by a fixed vector and
/// prefers a block of time slots. Emitted features are the user group, the
/// item category and the time slot; raw user and item ids are never emitted.
pub fn generate_with_report(config: &SyntheticConfig) -> Result<(Dataset, GenerationReport)> {
    config.validate()?;
    let n = config.n_domains;
    let k = config.latent_dim;
    let seed = config.seed;

    let mut rng = Rng::substream(seed, "latent", 0);
    let user_centers = centers(&mut rng, config.n_user_groups, k);
    let item_centers = centers(&mut rng, config.n_item_categories, k);
    let mut users: Vec<Entity> = (0..config.n_users)
        .map(|_| entity(&mut rng, &user_centers))
        .collect();
    let mut items: Vec<Entity> = (0..config.n_items)
        .map(|_| entity(&mut rng, &item_centers))
        .collect();

    let mut rng = Rng::substream(seed, "pools", 0);
    let (user_pools, user_real) = pools(
        &mut rng,
        &mut users,
        &user_centers,
        config.n_users,
        config.user_pool_size(),
        &config.user_overlap,
    );
    let (item_pools, item_real) = pools(
        &mut rng,
        &mut items,
        &item_centers,
        config.n_items,
        config.item_pool_size(),
        &config.item_overlap,
    );

    let mut rng = Rng::substream(seed, "domains", 0);
    let mut shifts = vec![vec![0.0; k]];
    for _ in 1..n {
        let v: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let norm = dot(&v, &v).sqrt().max(1e-12);
        // Scaled so that the shift moves the logit by about `domain_shift_scale`.
        let s = config.domain_shift_scale * (k as f64).sqrt() / norm;
        shifts.push(v.iter().map(|x| x * s).collect());
    }
    let t = config.n_time_slots;
    let slot_bias: Vec<f64> = (0..t).map(|_| 0.3 * rng.normal()).collect();
    let slot_cdfs: Vec<Vec<f64>> = (0..n)
        .map(|d| {
            let mut probs = vec![1.0 / t as f64; t];
            if d > 0 {
                let preferred: Vec<usize> = (0..t).filter(|s| s % (n - 1) == d - 1).collect();
                let rho = if preferred.is_empty() {
                    0.0
                } else {
                    config.context_domain_strength
                };
                probs.iter_mut().for_each(|p| *p *= 1.0 - rho);
                for &s in &preferred {
                    probs[s] += rho / preferred.len() as f64;
                }
            }
            probs
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let domain_cdf: Vec<f64> = config
        .proportions
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let mut rng = Rng::substream(seed, "impressions", 0);
    let affinity = (k as f64).sqrt();
    let mut rows = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let d = if i < n {
            i
        } else {
            rng.categorical(&domain_cdf)
        };
        let user = &users[user_pools[d][rng.below(user_pools[d].len())]];
        let item = &items[item_pools[d][rng.below(item_pools[d].len())]];
        let slot = rng.categorical(&slot_cdfs[d]);
        let shifted: Vec<f64> = item
            .latent
            .iter()
            .zip(&shifts[d])
            .map(|(a, b)| a + b)
            .collect();
        let logit = config.base_logit
            + affinity * dot(&user.latent, &shifted)
            + slot_bias[slot]
            + config.click_noise * rng.normal();
        let label = u8::from(rng.bernoulli(sigmoid_scalar(logit)));
        rows.push(Row {
            domain: d,
            label,
            ids: vec![user.group, item.group, slot],
        });
    }

    let dataset = Dataset {
        schema: config.schema(),
        rows,
        provenance: Some(Provenance {
            config_hash: config.hash(),
            seed,
        }),
    };
    Ok((
        dataset,
        GenerationReport {
            user_overlap: user_real,
            item_overlap: item_real,
        },
    ))
}
