//! Generated implicit-feedback logs with planted preference structure, for
//! exercising the real-data pipeline without downloading a dataset.
//!
//! Users and items live around a handful of cluster centres in a latent
//! space. Each user consumes a sequence of distinct items drawn with
//! probability ∝ exp(β_u · cos(p_u, q_j) + b_j), where β_u sets how
//! predictable the user is and b_j is an item popularity bias.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LiduError, Result};
use crate::rng::rng_from;
use crate::types::Interaction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub dim: usize,
    /// Spread of users and items around their cluster centre.
    pub cluster_noise: f64,
    pub min_len: usize,
    /// Mean number of interactions beyond `min_len` (geometric).
    pub mean_extra_len: f64,
    /// β_u is drawn uniformly from this range.
    pub beta_min: f64,
    pub beta_max: f64,
    /// Standard deviation of the item popularity bias.
    pub popularity: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_users: 2200,
            n_items: 1000,
            n_clusters: 10,
            dim: 8,
            cluster_noise: 0.6,
            min_len: 8,
            mean_extra_len: 17.0,
            beta_min: 0.5,
            beta_max: 12.0,
            popularity: 0.5,
            seed: 7,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 || self.n_clusters == 0 || self.dim == 0 {
            return Err(LiduError::InvalidConfig("fixture sizes must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.n_items || !(self.mean_extra_len >= 0.0) {
            return Err(LiduError::InvalidConfig(format!(
                "sequence length {}+{} invalid for {} items",
                self.min_len, self.mean_extra_len, self.n_items
            )));
        }
        if !(self.beta_min <= self.beta_max) || !(self.popularity >= 0.0) || !(self.cluster_noise >= 0.0) {
            return Err(LiduError::InvalidConfig("bad fixture parameters".into()));
        }
        Ok(())
    }
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// The planted parameters behind a fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub user_vecs: Vec<Vec<f64>>,
    pub item_vecs: Vec<Vec<f64>>,
    pub item_bias: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn plant(spec: &FixtureSpec) -> Result<Planted> {
    spec.validate()?;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, spec.cluster_noise).map_err(|e| LiduError::InvalidConfig(e.to_string()))?;
    let pop = Normal::new(0.0, spec.popularity).map_err(|e| LiduError::InvalidConfig(e.to_string()))?;
    let mut rng = rng_from(spec.seed, &[0x4649, 0]);
    let centres: Vec<Vec<f64>> = (0..spec.n_clusters)
        .map(|_| unit((0..spec.dim).map(|_| std.sample(&mut rng)).collect()))
        .collect();
    let around = |rng: &mut crate::rng::Rng| {
        let c = &centres[rng.random_range(0..spec.n_clusters)];
        unit(c.iter().map(|x| x + noise.sample(rng)).collect())
    };
    let item_vecs: Vec<Vec<f64>> = (0..spec.n_items).map(|_| around(&mut rng)).collect();
    let user_vecs: Vec<Vec<f64>> = (0..spec.n_users).map(|_| around(&mut rng)).collect();
    let item_bias = (0..spec.n_items).map(|_| pop.sample(&mut rng)).collect();
    let beta = (0..spec.n_users)
        .map(|_| spec.beta_min + (spec.beta_max - spec.beta_min) * rng.random::<f64>())
        .collect();
    Ok(Planted { user_vecs, item_vecs, item_bias, beta })
}

/// Generates the interaction log. Users are named `u<k>` and items `i<k>`;
/// timestamps increase along each user's sequence.
pub fn generate_fixture(spec: &FixtureSpec) -> Result<Vec<Interaction>> {
    let planted = plant(spec)?;
    let extra = Geometric::new(1.0 / (1.0 + spec.mean_extra_len)).map_err(|e| LiduError::InvalidConfig(e.to_string()))?;
    let mut out = Vec::new();
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(spec.n_items);
    for u in 0..spec.n_users {
        let mut rng = rng_from(spec.seed, &[0x4649, 1, u as u64]);
        let len = (spec.min_len + extra.sample(&mut rng) as usize).min(spec.n_items);
        let p = &planted.user_vecs[u];
        keys.clear();
        // Gumbel top-k: the key order is a draw without replacement
        for (j, q) in planted.item_vecs.iter().enumerate() {
            let logit = planted.beta[u] * crate::models::dot(p, q) + planted.item_bias[j];
            let g = -(-rng.random::<f64>().ln()).ln();
            keys.push((logit + g, j));
        }
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (t, &(_, j)) in keys[..len].iter().enumerate() {
            out.push(Interaction::new(format!("u{u}"), format!("i{j}"), t as i64, None));
        }
    }
    Ok(out)
}

/// Writes a log as `user,item,timestamp` CSV.
pub fn write_log<W: Write>(data: &[Interaction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user", "item", "timestamp"])?;
    for x in data {
        w.write_record([x.user.as_str(), x.item.as_str(), &x.timestamp.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
