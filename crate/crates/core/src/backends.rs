//! Score distributions from a trained factorization model: MC dropout on the
//! user tower, deep ensembles, and a Gaussian output head.

use rand::Rng;

use crate::error::{LiduError, Result};
use crate::models::{dot, MfModel};
use crate::rng::rng_from;
use crate::types::ScoreDistribution;

/// Repeated predictions for a set of items, one row per pass or model.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePack {
    passes: usize,
    items: usize,
    data: Vec<f64>,
}

impl SamplePack {
    pub fn new(passes: usize, items: usize, data: Vec<f64>) -> Result<Self> {
        assert_eq!(data.len(), passes * items, "sample matrix shape mismatch");
        if let Some(&bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(LiduError::InvalidDistribution { mean: bad, variance: f64::NAN });
        }
        Ok(Self { passes, items, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let passes = rows.len();
        let items = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == items), "ragged sample rows");
        Self::new(passes, items, rows.concat())
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    pub fn items(&self) -> usize {
        self.items
    }

    fn sample(&self, pass: usize, item: usize) -> f64 {
        self.data[pass * self.items + item]
    }
}

/// Per item: sample mean and population variance (divided by T).
pub fn variance_from_samples(pack: &SamplePack) -> Result<Vec<ScoreDistribution>> {
    let t = pack.passes();
    if t < 2 {
        return Err(LiduError::TooFewSamples { need: 2, got: t });
    }
    (0..pack.items())
        .map(|j| {
            let first = pack.sample(0, j);
            if (1..t).all(|p| pack.sample(p, j) == first) {
                return ScoreDistribution::new(first, 0.0);
            }
            let mean = (0..t).map(|p| pack.sample(p, j)).sum::<f64>() / t as f64;
            let var = (0..t).map(|p| (pack.sample(p, j) - mean).powi(2)).sum::<f64>() / t as f64;
            ScoreDistribution::new(mean, var)
        })
        .collect()
}

/// T forward passes with inverted dropout on the user embedding.
///
/// Pass `k` draws its mask from a generator seeded by (`seed`, user, k), so
/// results are reproducible and independent of evaluation order. Item
/// embeddings are shared across passes.
pub fn mc_dropout_predict(
    model: &MfModel,
    user: usize,
    candidates: &[usize],
    p: f64,
    t: usize,
    seed: u64,
) -> Result<Vec<ScoreDistribution>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(LiduError::InvalidConfig(format!("dropout probability {p} outside (0, 1)")));
    }
    if t < 2 {
        return Err(LiduError::TooFewSamples { need: 2, got: t });
    }
    if user >= model.n_users() {
        return Err(LiduError::UnknownUser(user.to_string()));
    }
    if let Some(&bad) = candidates.iter().find(|&&j| j >= model.n_items()) {
        return Err(LiduError::UnknownItem(bad.to_string()));
    }
    let u = model.user_emb.row(user);
    let keep_scale = 1.0 / (1.0 - p);
    let mut masked = vec![0.0; u.len()];
    let mut data = Vec::with_capacity(t * candidates.len());
    for pass in 0..t {
        let mut rng = rng_from(seed, &[user as u64, pass as u64]);
        for (m, &x) in masked.iter_mut().zip(u) {
            *m = if rng.random::<f64>() < p { 0.0 } else { x * keep_scale };
        }
        data.extend(candidates.iter().map(|&j| dot(&masked, model.item_emb.row(j))));
    }
    variance_from_samples(&SamplePack::new(t, candidates.len(), data)?)
}

/// One deterministic score per model per item.
pub fn ensemble_predict(models: &[MfModel], user: usize, candidates: &[usize]) -> Result<Vec<ScoreDistribution>> {
    if models.len() < 2 {
        return Err(LiduError::TooFewSamples { need: 2, got: models.len() });
    }
    if let Some(m) = models[1..].iter().find(|m| !m.same_id_space(&models[0])) {
        return Err(LiduError::IdSpaceMismatch(format!(
            "{}×{}×{} vs {}×{}×{}",
            models[0].n_users(),
            models[0].n_items(),
            models[0].dim,
            m.n_users(),
            m.n_items(),
            m.dim
        )));
    }
    let mut data = Vec::with_capacity(models.len() * candidates.len());
    for m in models {
        for &j in candidates {
            data.push(m.score(user, j)?);
        }
    }
    variance_from_samples(&SamplePack::new(models.len(), candidates.len(), data)?)
}

/// Mean from the score tower and variance exp(log σ²) from the variance tower.
pub fn gaussian_head_predict(model: &MfModel, user: usize, candidates: &[usize]) -> Result<Vec<ScoreDistribution>> {
    if model.variance.is_none() {
        return Err(LiduError::MissingVarianceTower);
    }
    candidates
        .iter()
        .map(|&j| ScoreDistribution::new(model.score(user, j)?, model.log_variance(user, j)?.exp()))
        .collect()
}
