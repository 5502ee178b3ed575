//! Beyond-accuracy user profiles (interest dynamism, list diversity) and
//! grouped LiDu summaries over them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LiduError, Result};
use crate::models::{dot, Matrix};

/// 1 − cosine similarity; 1 when either vector is zero.
pub fn dissimilarity(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

fn rows<'a>(items: &'a [usize], emb: &'a Matrix) -> Result<Vec<&'a [f64]>> {
    items
        .iter()
        .map(|&i| {
            if i < emb.rows() {
                Ok(emb.row(i))
            } else {
                Err(LiduError::UnknownItem(i.to_string()))
            }
        })
        .collect()
}

/// Mean dissimilarity between chronologically adjacent items.
pub fn interest_dynamism(user_items: &[usize], item_emb: &Matrix) -> Result<f64> {
    if user_items.len() < 2 {
        return Err(LiduError::ListTooShort { k: 2, len: user_items.len() });
    }
    let v = rows(user_items, item_emb)?;
    Ok(v.windows(2).map(|w| dissimilarity(w[0], w[1])).sum::<f64>() / (v.len() - 1) as f64)
}

/// Mean dissimilarity over all unordered pairs of the list.
pub fn list_diversity(rec_list: &[usize], item_emb: &Matrix) -> Result<f64> {
    let n = rec_list.len();
    if n < 2 {
        return Err(LiduError::ListTooShort { k: 2, len: n });
    }
    let v = rows(rec_list, item_emb)?;
    let mut total = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            total += dissimilarity(v[a], v[b]);
        }
    }
    Ok(2.0 * total / (n * (n - 1)) as f64)
}

/// One user's grouping key and LiDu.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyedValue {
    pub user: String,
    pub key: f64,
    pub lidu: f64,
}

pub const LIDU_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub group_index: usize,
    pub mean_log_lidu: f64,
    pub group_key_range: String,
    #[serde(skip)]
    pub size: usize,
}

/// Splits users into `n_groups` equal-size groups by key (ties by user id)
/// and returns the mean natural-log LiDu of each, optionally without the
/// top group.
pub fn quantile_group_means(values: &[KeyedValue], n_groups: usize, drop_top: bool) -> Result<Vec<GroupMean>> {
    if n_groups == 0 || values.len() < n_groups {
        return Err(LiduError::NotEnoughData(format!(
            "{} users cannot fill {n_groups} groups",
            values.len()
        )));
    }
    let mut order: Vec<&KeyedValue> = values.iter().collect();
    order.sort_by(|a, b| a.key.total_cmp(&b.key).then_with(|| a.user.cmp(&b.user)));
    let keep = if drop_top { n_groups - 1 } else { n_groups };
    let n = order.len();
    Ok((0..keep)
        .map(|g| {
            let part = &order[g * n / n_groups..(g + 1) * n / n_groups];
            let mean_log_lidu =
                part.iter().map(|v| v.lidu.max(LIDU_LOG_FLOOR).ln()).sum::<f64>() / part.len() as f64;
            GroupMean {
                group_index: g,
                mean_log_lidu,
                group_key_range: format!("[{}, {}]", part[0].key, part[part.len() - 1].key),
                size: part.len(),
            }
        })
        .collect())
}

pub fn write_group_csv<W: Write>(groups: &[GroupMean], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for g in groups {
        w.serialize(g)?;
    }
    w.flush()?;
    Ok(())
}
