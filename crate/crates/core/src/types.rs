//! Domain types shared across the crate.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{LiduError, Result};

/// Gaussian belief over one item's score: mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    mean: f64,
    variance: f64,
}

impl ScoreDistribution {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(LiduError::InvalidDistribution { mean, variance });
        }
        Ok(Self { mean, variance })
    }

    /// A point mass (zero variance).
    pub fn certain(mean: f64) -> Result<Self> {
        Self::new(mean, 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

/// A user's candidate items sorted by descending mean score.
///
/// Ties on the mean are broken by ascending item index, so the order depends
/// only on the set of (item, distribution) pairs and not on input order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction {
    user: usize,
    items: Vec<(usize, ScoreDistribution)>,
}

impl RankedPrediction {
    pub fn new(user: usize, items: impl IntoIterator<Item = (usize, ScoreDistribution)>) -> Result<Self> {
        let mut items: Vec<_> = items.into_iter().collect();
        items.sort_by(|a, b| b.1.mean.total_cmp(&a.1.mean).then(a.0.cmp(&b.0)));
        let mut seen = HashSet::with_capacity(items.len());
        for (id, _) in &items {
            if !seen.insert(*id) {
                return Err(LiduError::DuplicateItem(*id));
            }
        }
        Ok(Self { user, items })
    }

    /// Builds a prediction from aligned item ids and distributions.
    pub fn from_parts(user: usize, item_ids: &[usize], dists: &[ScoreDistribution]) -> Result<Self> {
        assert_eq!(item_ids.len(), dists.len(), "ids and distributions must align");
        Self::new(user, item_ids.iter().copied().zip(dists.iter().copied()))
    }

    pub fn user(&self) -> usize {
        self.user
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(usize, ScoreDistribution)] {
        &self.items
    }

    pub fn dist(&self, position: usize) -> &ScoreDistribution {
        &self.items[position].1
    }

    /// Keeps only the first `len` positions.
    pub fn truncate(&mut self, len: usize) {
        self.items.truncate(len);
    }
}

/// One raw interaction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
    pub rating: Option<f64>,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: i64, rating: Option<f64>) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
            timestamp,
            rating,
        }
    }
}

/// Leave-one-out partition of an interaction log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Interaction>,
    pub valid: Vec<Interaction>,
    pub test: Vec<Interaction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    McDropout,
    Ensemble,
    GaussianHead,
}

impl Backend {
    pub fn tag(self) -> &'static str {
        match self {
            Backend::McDropout => "dp",
            Backend::Ensemble => "en",
            Backend::GaussianHead => "vb",
        }
    }
}

/// How the per-position weight p_n enters the top-N list probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionBias {
    /// Each position's summed log-probability is divided by p_n.
    #[default]
    Discount,
    /// Every pairwise factor is divided by p_n inside the product. This only
    /// adds a model-independent constant to the uncertainty.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiduConfig {
    /// Number of head positions whose pairwise comparisons are counted (N).
    pub n_top: usize,
    /// Deepest list position compared against (L).
    pub l_max: usize,
    pub backend: Backend,
    pub dropout_p: f64,
    /// Forward passes for MC dropout (T).
    pub n_passes: usize,
    pub position_bias: PositionBias,
}

impl Default for LiduConfig {
    fn default() -> Self {
        Self {
            n_top: 100,
            l_max: 1000,
            backend: Backend::McDropout,
            dropout_p: 0.2,
            n_passes: 50,
            position_bias: PositionBias::Discount,
        }
    }
}

impl LiduConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_top == 0 || self.l_max == 0 {
            return Err(LiduError::InvalidConfig("n_top and l_max must be positive".into()));
        }
        if self.n_top > self.l_max {
            return Err(LiduError::InvalidConfig(format!(
                "n_top ({}) must not exceed l_max ({})",
                self.n_top, self.l_max
            )));
        }
        if !(self.dropout_p > 0.0 && self.dropout_p < 1.0) {
            return Err(LiduError::InvalidConfig(format!(
                "dropout probability {} outside (0, 1)",
                self.dropout_p
            )));
        }
        if self.n_passes < 2 {
            return Err(LiduError::InvalidConfig("at least two forward passes are required".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(m: f64) -> ScoreDistribution {
        ScoreDistribution::new(m, 0.1).unwrap()
    }

    #[test]
    fn rejects_bad_distributions() {
        assert!(ScoreDistribution::new(0.0, -1e-9).is_err());
        assert!(ScoreDistribution::new(f64::NAN, 1.0).is_err());
        assert!(ScoreDistribution::new(1.0, f64::INFINITY).is_err());
        assert!(ScoreDistribution::new(1.0, 0.0).is_ok());
    }

    #[test]
    fn ranking_breaks_ties_by_item() {
        let p = RankedPrediction::new(0, vec![(5, d(1.0)), (2, d(1.0)), (9, d(3.0))]).unwrap();
        let ids: Vec<_> = p.items().iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![9, 2, 5]);
    }

    #[test]
    fn ranking_rejects_duplicates() {
        assert!(RankedPrediction::new(0, vec![(1, d(1.0)), (1, d(2.0))]).is_err());
        assert!(RankedPrediction::new(0, vec![(1, d(1.0)), (1, d(1.0))]).is_err());
    }

    #[test]
    fn ranking_is_order_independent() {
        let a = vec![(0, d(0.3)), (1, d(0.3)), (2, d(-1.0)), (3, d(4.0))];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(RankedPrediction::new(1, a).unwrap(), RankedPrediction::new(1, b).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(LiduConfig::default().validate().is_ok());
        let bad = LiduConfig { n_top: 11, l_max: 10, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = LiduConfig { dropout_p: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
