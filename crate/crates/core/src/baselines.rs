//! Label-free baselines from query performance prediction: score spread
//! (NQC), score magnitude and variability (SMV), and properties of a
//! similarity graph over the recommended items (W-Graph).

use serde::{Deserialize, Serialize};

use crate::error::{LiduError, Result};
use crate::models::{dot, Matrix};
use crate::types::RankedPrediction;

/// Mean scores of the top-N items, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct TopNScores {
    scores: Vec<f64>,
    item_ids: Vec<usize>,
}

impl TopNScores {
    pub fn new(scores: Vec<f64>, item_ids: Vec<usize>) -> Result<Self> {
        if scores.len() != item_ids.len() {
            return Err(LiduError::InvalidConfig(format!(
                "{} scores for {} items",
                scores.len(),
                item_ids.len()
            )));
        }
        if scores.len() < 2 {
            return Err(LiduError::ListTooShort { k: 2, len: scores.len() });
        }
        if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(LiduError::InvalidDistribution { mean: bad, variance: 0.0 });
        }
        if scores.windows(2).any(|w| w[0] < w[1]) {
            return Err(LiduError::InvalidConfig("top-N scores must be descending".into()));
        }
        Ok(Self { scores, item_ids })
    }

    /// The first `n` means of a ranked prediction.
    pub fn from_prediction(pred: &RankedPrediction, n: usize) -> Result<Self> {
        if n > pred.len() {
            return Err(LiduError::ListTooShort { k: n, len: pred.len() });
        }
        let head = &pred.items()[..n];
        Self::new(head.iter().map(|(_, d)| d.mean()).collect(), head.iter().map(|&(i, _)| i).collect())
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn item_ids(&self) -> &[usize] {
        &self.item_ids
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation of the top-N scores.
pub fn nqc(top: &TopNScores) -> f64 {
    let s = top.scores();
    let mu = mean(s);
    (s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
}

/// (1/N) Σ s·|ln(s/μ)|, after shifting scores by 1 − min when min ≤ 0.
pub fn smv(top: &TopNScores) -> f64 {
    let min = top.scores().iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min <= 0.0 { 1.0 - min } else { 0.0 };
    let s: Vec<f64> = top.scores().iter().map(|x| x + shift).collect();
    let mu = mean(&s);
    s.iter().map(|x| x * (x / mu).ln().abs()).sum::<f64>() / s.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphVariant {
    /// Weighted average clustering coefficient.
    Wacc,
    /// Weighted average degree centrality.
    Wadc,
    /// Weighted average neighbour degree.
    Wand,
    /// Weighted average degree.
    Wd,
}

impl GraphVariant {
    pub const ALL: [GraphVariant; 4] = [GraphVariant::Wacc, GraphVariant::Wadc, GraphVariant::Wand, GraphVariant::Wd];

    pub fn name(self) -> &'static str {
        match self {
            GraphVariant::Wacc => "WACC",
            GraphVariant::Wadc => "WADC",
            GraphVariant::Wand => "WAND",
            GraphVariant::Wd => "WD",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GraphStats {
    pub wacc: f64,
    pub wadc: f64,
    pub wand: f64,
    pub wd: f64,
}

impl GraphStats {
    pub fn get(&self, v: GraphVariant) -> f64 {
        match v {
            GraphVariant::Wacc => self.wacc,
            GraphVariant::Wadc => self.wadc,
            GraphVariant::Wand => self.wand,
            GraphVariant::Wd => self.wd,
        }
    }
}

/// Cosine similarity clamped to [0, 1]; 0 if either vector is zero.
fn edge_weight(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(0.0, 1.0)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median pruning threshold used by [`wgraph`].
pub const DEFAULT_PRUNE_QUANTILE: f64 = 0.5;

/// All four graph properties of the item similarity graph.
///
/// Edges weighted below the `prune_quantile` quantile of all pairwise weights
/// are removed, as are zero-weight edges.
pub fn wgraph_all(items: &[usize], item_emb: &Matrix, prune_quantile: f64) -> Result<GraphStats> {
    let n = items.len();
    if n < 2 {
        return Err(LiduError::ListTooShort { k: 2, len: n });
    }
    if let Some(&bad) = items.iter().find(|&&i| i >= item_emb.rows()) {
        return Err(LiduError::UnknownItem(bad.to_string()));
    }
    let mut w = vec![0.0; n * n];
    let mut all = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let x = edge_weight(item_emb.row(items[a]), item_emb.row(items[b]));
            w[a * n + b] = x;
            w[b * n + a] = x;
            all.push(x);
        }
    }
    all.sort_by(f64::total_cmp);
    let threshold = quantile(&all, prune_quantile.clamp(0.0, 1.0));
    for x in w.iter_mut() {
        if *x < threshold || *x <= 0.0 {
            *x = 0.0;
        }
    }
    let max_w = w.iter().copied().fold(0.0, f64::max);
    if max_w == 0.0 {
        return Ok(GraphStats::default());
    }

    let strength: Vec<f64> = (0..n).map(|a| w[a * n..(a + 1) * n].iter().sum()).collect();
    let wd = mean(&strength);
    let wadc = wd / (n - 1) as f64;
    let wand = mean(
        &(0..n)
            .map(|a| {
                if strength[a] == 0.0 {
                    0.0
                } else {
                    (0..n).map(|b| w[a * n + b] * strength[b]).sum::<f64>() / strength[a]
                }
            })
            .collect::<Vec<_>>(),
    );
    let wacc = mean(
        &(0..n)
            .map(|a| {
                let nbrs: Vec<usize> = (0..n).filter(|&b| w[a * n + b] > 0.0).collect();
                let k = nbrs.len();
                if k < 2 {
                    return 0.0;
                }
                let mut tri = 0.0;
                for (x, &b) in nbrs.iter().enumerate() {
                    for &c in &nbrs[x + 1..] {
                        tri += (w[a * n + b] * w[a * n + c] * w[b * n + c] / max_w.powi(3)).cbrt();
                    }
                }
                2.0 * tri / (k * (k - 1)) as f64
            })
            .collect::<Vec<_>>(),
    );
    Ok(GraphStats { wacc, wadc, wand, wd })
}

pub fn wgraph(items: &[usize], item_emb: &Matrix, variant: GraphVariant) -> Result<f64> {
    Ok(wgraph_all(items, item_emb, DEFAULT_PRUNE_QUANTILE)?.get(variant))
}

/// Flips QPP scores (higher = better) into the uncertainty orientation.
pub fn negate_for_comparison(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| -v).collect()
}
