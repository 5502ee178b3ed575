//! Performance labels and estimator-quality metrics.
//!
//! Estimators enter in "higher = worse predicted performance" orientation;
//! the metrics below assume it.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LiduError, Result};

/// NDCG@k with a single relevant item at 1-based `rank`.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1, "ranks are 1-based");
    if rank > k {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

/// 1-based rank of `target` among items not `excluded`, ties broken by
/// ascending item index.
pub fn target_rank(scores: &[f64], target: usize, excluded: impl Fn(usize) -> bool) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != target && !excluded(j) && (s > t || (s == t && j < target)))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub user: String,
    pub estimate: f64,
    pub ndcg: f64,
}

/// Per-user estimates aligned with NDCG labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimatorReport {
    rows: Vec<ReportRow>,
}

impl EstimatorReport {
    pub fn new(rows: Vec<ReportRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.user.as_str()) {
                return Err(LiduError::InvalidConfig(format!("duplicate user {} in report", r.user)));
            }
            if !r.estimate.is_finite() || !r.ndcg.is_finite() {
                return Err(LiduError::InvalidConfig(format!("non-finite entry for user {}", r.user)));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_columns(users: &[String], estimates: &[f64], ndcg: &[f64]) -> Result<Self> {
        assert!(users.len() == estimates.len() && users.len() == ndcg.len());
        Self::new(
            users
                .iter()
                .zip(estimates.iter().zip(ndcg))
                .map(|(u, (&e, &n))| ReportRow { user: u.clone(), estimate: e, ndcg: n })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.estimate).collect()
    }

    pub fn ndcgs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ndcg).collect()
    }

    /// Keeps the rows whose user satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self { rows: self.rows.iter().filter(|r| keep(&r.user)).cloned().collect() }
    }

    pub fn negated(&self) -> Self {
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| ReportRow { estimate: -r.estimate, ..r.clone() })
                .collect(),
        }
    }
}

/// Ascending 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// How the win-rate threshold δ is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Pairs must be more than δ = frac·n positions apart in estimate rank.
    #[default]
    Rank,
    /// Pairs must differ by more than δ = frac·n in raw estimate value.
    Raw,
}

/// Fraction of sufficiently separated user pairs whose estimate order agrees
/// with their NDCG order.
///
/// With `expect_negative`, agreement means the user with the larger estimate
/// has the lower NDCG. NDCG ties count one half; if no pair qualifies the
/// result is 0.5.
pub fn win_rate_delta(report: &EstimatorReport, delta_frac: f64, expect_negative: bool, mode: DeltaMode) -> f64 {
    let n = report.len();
    let ndcg = report.ndcgs();
    let keys = match mode {
        DeltaMode::Rank => average_ranks(&report.estimates()),
        DeltaMode::Raw => report.estimates(),
    };
    let delta = delta_frac * n as f64;
    // doubled counts keep the ½ credit for ties exact and chunking-independent
    let (pairs, wins2) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut pairs = 0u64;
            let mut wins2 = 0u64;
            for j in 0..n {
                if keys[i] > keys[j] + delta {
                    pairs += 1;
                    let hit = if expect_negative { ndcg[i] < ndcg[j] } else { ndcg[i] > ndcg[j] };
                    wins2 += if hit {
                        2
                    } else if ndcg[i] == ndcg[j] {
                        1
                    } else {
                        0
                    };
                }
            }
            (pairs, wins2)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if pairs == 0 {
        0.5
    } else {
        wins2 as f64 / (2 * pairs) as f64
    }
}

/// Pearson correlation; `None` when either column is constant or n < 2.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r between estimates and NDCG.
pub fn pearson_r(report: &EstimatorReport) -> Option<f64> {
    pearson(&report.estimates(), &report.ndcgs())
}

/// Mean absolute difference between the NDCG rank (best = 1) and the
/// estimate rank (lowest estimate = 1).
pub fn sare(report: &EstimatorReport) -> f64 {
    let n = report.len();
    if n == 0 {
        return 0.0;
    }
    let neg_ndcg: Vec<f64> = report.rows().iter().map(|r| -r.ndcg).collect();
    let r_ndcg = average_ranks(&neg_ndcg);
    let r_est = average_ranks(&report.estimates());
    r_ndcg.iter().zip(&r_est).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub win_rate: f64,
    pub pearson_r: Option<f64>,
    pub sare: f64,
    pub n_users: usize,
}

pub fn summarize(report: &EstimatorReport, delta_frac: f64, mode: DeltaMode) -> MetricSummary {
    MetricSummary {
        win_rate: win_rate_delta(report, delta_frac, true, mode),
        pearson_r: pearson_r(report),
        sare: sare(report),
        n_users: report.len(),
    }
}
