//! Dual-tower matrix factorization models and their trainers.

mod adam;
pub mod checkpoint;
pub mod loss;
mod train;

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LiduError, Result};
use crate::rng::rng_from;

pub use adam::Adam;
pub use train::{
    train_bpr, train_gaussian_nll, train_mse, user_mean_loss, EpochStat, LossKind, NllOptions,
    TrainConfig, TrainReport, Trained,
};

/// Lower and upper clamp on the variance tower's log-variance output.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn gaussian(rows: usize, cols: usize, std: f64, seed: u64) -> Self {
        let mut rng = rng_from(seed, &[rows as u64, cols as u64]);
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Bijection between external string ids and dense row indices.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for IdMap {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
    }
}

impl From<Vec<String>> for IdMap {
    fn from(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }
}

impl From<IdMap> for Vec<String> {
    fn from(map: IdMap) -> Self {
        map.ids
    }
}

impl IdMap {
    /// Ids "0", "1", … "n-1".
    pub fn sequential(n: usize) -> Self {
        (0..n).map(|i| i.to_string()).collect::<Vec<_>>().into()
    }

    /// Returns the index of `id`, assigning the next free one if unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Row-count and dimension of a model before its weights exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub users: IdMap,
    pub items: IdMap,
    pub dim: usize,
}

/// Second pair of embedding tables producing log σ² = ũᵀṽ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceTower {
    pub user_emb: Matrix,
    pub item_emb: Matrix,
}

/// Two-tower factorization model scoring (user, item) as uᵀv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub users: IdMap,
    pub items: IdMap,
    pub dim: usize,
    pub user_emb: Matrix,
    pub item_emb: Matrix,
    pub variance: Option<VarianceTower>,
}

impl MfModel {
    /// Gaussian(0, std²) initialization of the mean tower.
    pub fn random(shape: &ModelShape, std: f64, seed: u64) -> Self {
        let (nu, ni, d) = (shape.users.len(), shape.items.len(), shape.dim);
        Self {
            users: shape.users.clone(),
            items: shape.items.clone(),
            dim: d,
            user_emb: Matrix::gaussian(nu, d, std, seed ^ 0x5553_4552),
            item_emb: Matrix::gaussian(ni, d, std, seed ^ 0x4954_454d),
            variance: None,
        }
    }

    pub fn from_embeddings(users: IdMap, items: IdMap, user_emb: Matrix, item_emb: Matrix) -> Result<Self> {
        if user_emb.rows() != users.len() || item_emb.rows() != items.len() {
            return Err(LiduError::InvalidConfig("embedding rows must match id maps".into()));
        }
        if user_emb.cols() != item_emb.cols() {
            return Err(LiduError::InvalidConfig("user and item embeddings differ in width".into()));
        }
        Ok(Self {
            users,
            items,
            dim: user_emb.cols(),
            user_emb,
            item_emb,
            variance: None,
        })
    }

    /// Attaches a freshly initialized variance tower of the same width.
    pub fn with_variance_tower(mut self, std: f64, seed: u64) -> Self {
        let (nu, ni, d) = (self.n_users(), self.n_items(), self.dim);
        self.variance = Some(VarianceTower {
            user_emb: Matrix::gaussian(nu, d, std, seed ^ 0x5641_5255),
            item_emb: Matrix::gaussian(ni, d, std, seed ^ 0x5641_5249),
        });
        self
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_index(&self, id: &str) -> Result<usize> {
        self.users.get(id).ok_or_else(|| LiduError::UnknownUser(id.to_string()))
    }

    pub fn item_index(&self, id: &str) -> Result<usize> {
        self.items.get(id).ok_or_else(|| LiduError::UnknownItem(id.to_string()))
    }

    fn check(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.n_users() {
            return Err(LiduError::UnknownUser(user.to_string()));
        }
        if item >= self.n_items() {
            return Err(LiduError::UnknownItem(item.to_string()));
        }
        Ok(())
    }

    /// uᵀv for dense indices.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        self.check(user, item)?;
        Ok(self.score_raw(user, item))
    }

    pub fn score_by_id(&self, user: &str, item: &str) -> Result<f64> {
        Ok(self.score_raw(self.user_index(user)?, self.item_index(item)?))
    }

    #[inline]
    pub(crate) fn score_raw(&self, user: usize, item: usize) -> f64 {
        dot(self.user_emb.row(user), self.item_emb.row(item))
    }

    /// Scores of one user against every item, in item-index order.
    pub fn score_all(&self, user: usize) -> Result<Vec<f64>> {
        if user >= self.n_users() {
            return Err(LiduError::UnknownUser(user.to_string()));
        }
        let u = self.user_emb.row(user);
        Ok((0..self.n_items()).map(|i| dot(u, self.item_emb.row(i))).collect())
    }

    /// Unclamped variance-tower output ũᵀṽ.
    pub(crate) fn raw_log_variance(&self, user: usize, item: usize) -> Option<f64> {
        self.variance
            .as_ref()
            .map(|v| dot(v.user_emb.row(user), v.item_emb.row(item)))
    }

    /// Clamped log σ² of the Gaussian head.
    pub fn log_variance(&self, user: usize, item: usize) -> Result<f64> {
        self.check(user, item)?;
        self.raw_log_variance(user, item)
            .map(|lv| lv.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .ok_or(LiduError::MissingVarianceTower)
    }

    /// True when both models index the same users and items at the same width.
    pub fn same_id_space(&self, other: &MfModel) -> bool {
        self.users == other.users && self.items == other.items && self.dim == other.dim
    }

    pub fn is_finite(&self) -> bool {
        let finite = |m: &Matrix| m.as_slice().iter().all(|x| x.is_finite());
        finite(&self.user_emb)
            && finite(&self.item_emb)
            && self
                .variance
                .as_ref()
                .is_none_or(|v| finite(&v.user_emb) && finite(&v.item_emb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(user: Vec<f64>, item: Vec<f64>) -> MfModel {
        let d = user.len();
        MfModel::from_embeddings(
            IdMap::sequential(1),
            IdMap::sequential(1),
            Matrix::from_vec(1, d, user),
            Matrix::from_vec(1, d, item),
        )
        .unwrap()
    }

    #[test]
    fn score_examples() {
        assert_eq!(tiny(vec![0.0, 0.0], vec![3.0, -1.0]).score(0, 0).unwrap(), 0.0);
        assert_eq!(tiny(vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]).score(0, 0).unwrap(), 1.0);
        assert_eq!(tiny(vec![1.0, 2.0], vec![3.0, -1.0]).score(0, 0).unwrap(), 1.0);
        assert_eq!(tiny(vec![1.0, 2.0], vec![3.0, -1.0]).score_by_id("0", "0").unwrap(), 1.0);
    }

    #[test]
    fn unknown_ids_error() {
        let m = tiny(vec![1.0], vec![1.0]);
        assert!(matches!(m.score(1, 0), Err(LiduError::UnknownUser(_))));
        assert!(matches!(m.score(0, 3), Err(LiduError::UnknownItem(_))));
        assert!(matches!(m.score_by_id("x", "0"), Err(LiduError::UnknownUser(_))));
        assert!(matches!(m.log_variance(0, 0), Err(LiduError::MissingVarianceTower)));
    }

    #[test]
    fn random_init_is_seeded() {
        let shape = ModelShape { users: IdMap::sequential(4), items: IdMap::sequential(5), dim: 3 };
        let a = MfModel::random(&shape, 0.1, 9);
        let b = MfModel::random(&shape, 0.1, 9);
        let c = MfModel::random(&shape, 0.1, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a.user_emb, a.item_emb.clone());
    }

    #[test]
    fn id_map_interning() {
        let mut m = IdMap::default();
        assert_eq!(m.intern("b"), 0);
        assert_eq!(m.intern("a"), 1);
        assert_eq!(m.intern("b"), 0);
        assert_eq!(m.get("a"), Some(1));
        assert_eq!(m.id(0), "b");
    }
}
