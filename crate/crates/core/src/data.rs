//! Interaction-log ingestion, filtering, k-core pruning and leave-one-out
//! splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{LiduError, Result};
use crate::models::IdMap;
use crate::types::{DatasetSplit, Interaction};

/// Where and how to read a raw interaction log.
#[derive(Debug, Clone)]
pub struct RawLogSpec {
    pub path: PathBuf,
    pub user_col: String,
    pub item_col: String,
    pub time_col: String,
    pub rating_col: Option<String>,
    pub rating_threshold: Option<f64>,
    pub k_core: usize,
    /// Field delimiter; detected from the header line when absent.
    pub delimiter: Option<u8>,
}

impl RawLogSpec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            user_col: "user".into(),
            item_col: "item".into(),
            time_col: "timestamp".into(),
            rating_col: None,
            rating_threshold: None,
            k_core: 0,
            delimiter: None,
        }
    }
}

fn sniff_delimiter(head: &[u8]) -> u8 {
    let first_line = head.split(|&b| b == b'\n').next().unwrap_or(&[]);
    if first_line.contains(&b'\t') {
        b'\t'
    } else {
        b','
    }
}

/// Reads the log named by `spec`. Filtering and k-core are not applied here.
pub fn load_interactions(spec: &RawLogSpec) -> Result<Vec<Interaction>> {
    let mut bytes = Vec::new();
    File::open(&spec.path)?.read_to_end(&mut bytes)?;
    read_interactions(&bytes[..], spec)
}

pub fn read_interactions(bytes: &[u8], spec: &RawLogSpec) -> Result<Vec<Interaction>> {
    let delimiter = spec.delimiter.unwrap_or_else(|| sniff_delimiter(bytes));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| LiduError::MissingColumn {
            path: spec.path.clone(),
            column: name.to_string(),
        })
    };
    let user_at = column(&spec.user_col)?;
    let item_at = column(&spec.item_col)?;
    let time_at = column(&spec.time_col)?;
    let rating_at = match (&spec.rating_col, spec.rating_threshold) {
        (Some(c), _) => Some(column(c)?),
        (None, Some(_)) => {
            return Err(LiduError::MissingColumn { path: spec.path.clone(), column: "rating".into() })
        }
        (None, None) => None,
    };

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            LiduError::Parse { path: spec.path.clone(), line, message: e.to_string() }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| LiduError::Parse { path: spec.path.clone(), line, message };
        let field = |i: usize, name: &str| {
            record
                .get(i)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| parse_err(format!("empty `{name}` field")))
        };
        let user = field(user_at, &spec.user_col)?;
        let item = field(item_at, &spec.item_col)?;
        let raw_time = field(time_at, &spec.time_col)?;
        let timestamp = raw_time
            .parse::<i64>()
            .or_else(|_| raw_time.parse::<f64>().map(|t| t.floor() as i64))
            .map_err(|_| parse_err(format!("bad timestamp `{raw_time}`")))?;
        let rating = match rating_at {
            Some(i) => {
                let raw = field(i, "rating")?;
                Some(raw.parse::<f64>().map_err(|_| parse_err(format!("bad rating `{raw}`")))?)
            }
            None => None,
        };
        out.push(Interaction::new(user, item, timestamp, rating));
    }
    Ok(out)
}

/// Keeps records rated at least `threshold`.
pub fn filter_ratings(data: Vec<Interaction>, threshold: f64) -> Result<Vec<Interaction>> {
    if let Some(bad) = data.iter().find(|x| x.rating.is_none()) {
        return Err(LiduError::InvalidConfig(format!(
            "interaction ({}, {}) has no rating to filter on",
            bad.user, bad.item
        )));
    }
    Ok(data.into_iter().filter(|x| x.rating.is_some_and(|r| r >= threshold)).collect())
}

/// Maximal k-core of the user–item bipartite graph, degrees counted in
/// interactions. Input order is preserved.
pub fn k_core(mut data: Vec<Interaction>, k: usize) -> Vec<Interaction> {
    if k == 0 {
        return data;
    }
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for x in &data {
            *user_deg.entry(&x.user).or_default() += 1;
            *item_deg.entry(&x.item).or_default() += 1;
        }
        let keep: Vec<bool> = data
            .iter()
            .map(|x| user_deg[x.user.as_str()] >= k && item_deg[x.item.as_str()] >= k)
            .collect();
        if keep.iter().all(|&b| b) {
            return data;
        }
        let mut flags = keep.into_iter();
        data.retain(|_| flags.next().unwrap());
    }
}

/// Groups interactions per user in first-appearance order, each user's list
/// sorted by (timestamp, input order).
fn by_user(data: &[Interaction]) -> Vec<Vec<&Interaction>> {
    let mut order: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<&Interaction>> = Vec::new();
    for x in data {
        let slot = *order.entry(&x.user).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(x);
    }
    for g in &mut groups {
        g.sort_by_key(|x| x.timestamp);
    }
    groups
}

/// Last interaction → test, second last → valid, the rest → train. Users with
/// fewer than three interactions are dropped.
pub fn leave_one_out(data: &[Interaction]) -> DatasetSplit {
    let mut split = DatasetSplit::default();
    let mut dropped = 0;
    for hist in by_user(data) {
        if hist.len() < 3 {
            dropped += 1;
            continue;
        }
        let n = hist.len();
        split.train.extend(hist[..n - 2].iter().map(|x| (*x).clone()));
        split.valid.push(hist[n - 2].clone());
        split.test.push(hist[n - 1].clone());
    }
    if dropped > 0 {
        warn!("leave-one-out dropped {dropped} users with fewer than 3 interactions");
    }
    split
}

/// Users with fewer than `threshold` training interactions are inactive.
/// Returns (active, inactive) in first-appearance order.
pub fn activeness_groups(split: &DatasetSplit, threshold: usize) -> (Vec<String>, Vec<String>) {
    let mut counts: Vec<(String, usize)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let users = split.train.iter().chain(&split.valid).chain(&split.test).map(|x| &x.user);
    for u in users {
        index.entry(u.clone()).or_insert_with(|| {
            counts.push((u.clone(), 0));
            counts.len() - 1
        });
    }
    for x in &split.train {
        counts[index[&x.user]].1 += 1;
    }
    let (active, inactive): (Vec<_>, Vec<_>) = counts.into_iter().partition(|(_, c)| *c >= threshold);
    (
        active.into_iter().map(|(u, _)| u).collect(),
        inactive.into_iter().map(|(u, _)| u).collect(),
    )
}

/// Writes the canonical split file: `user,item,timestamp,split` per line.
pub fn write_split<W: Write>(split: &DatasetSplit, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user", "item", "timestamp", "split"])?;
    for (tag, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        for x in part {
            w.write_record([x.user.as_str(), x.item.as_str(), &x.timestamp.to_string(), tag])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut split = DatasetSplit::default();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |message: &str| LiduError::Parse { path: path.to_path_buf(), line, message: message.into() };
        if record.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let ts = record[2].parse::<i64>().map_err(|_| err("bad timestamp"))?;
        let x = Interaction::new(&record[0], &record[1], ts, None);
        match &record[3] {
            "train" => split.train.push(x),
            "valid" => split.valid.push(x),
            "test" => split.test.push(x),
            other => return Err(err(&format!("unknown split tag `{other}`"))),
        }
    }
    Ok(split)
}

/// A split re-expressed over dense user and item indices.
#[derive(Debug, Clone)]
pub struct IndexedSplit {
    pub users: IdMap,
    pub items: IdMap,
    /// Per user, training items in chronological order.
    pub train: Vec<Vec<usize>>,
    /// Per user, training items sorted and deduplicated.
    pub train_sorted: Vec<Vec<usize>>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl IndexedSplit {
    /// Every user must have exactly one valid and one test interaction.
    pub fn from_split(split: &DatasetSplit) -> Result<Self> {
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        for x in split.train.iter().chain(&split.valid).chain(&split.test) {
            users.intern(&x.user);
            items.intern(&x.item);
        }
        let n = users.len();
        let mut train = vec![Vec::new(); n];
        let mut valid = vec![None; n];
        let mut test = vec![None; n];
        let groups = by_user(&split.train);
        for hist in groups {
            let u = users.get(&hist[0].user).unwrap();
            train[u] = hist.iter().map(|x| items.get(&x.item).unwrap()).collect();
        }
        for (slot, part) in [(&mut valid, &split.valid), (&mut test, &split.test)] {
            for x in part {
                let u = users.get(&x.user).unwrap();
                if slot[u].replace(items.get(&x.item).unwrap()).is_some() {
                    return Err(LiduError::NotEnoughData(format!("user {} has several held-out items", x.user)));
                }
            }
        }
        let missing = |v: &Vec<Option<usize>>| v.iter().position(|x| x.is_none());
        if let Some(u) = missing(&valid).or(missing(&test)) {
            return Err(LiduError::NotEnoughData(format!("user {} lacks a held-out item", users.id(u))));
        }
        let train_sorted = train
            .iter()
            .map(|h| {
                let mut s = h.clone();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        Ok(Self {
            users,
            items,
            train,
            train_sorted,
            valid: valid.into_iter().map(Option::unwrap).collect(),
            test: test.into_iter().map(Option::unwrap).collect(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn in_train(&self, user: usize, item: usize) -> bool {
        self.train_sorted[user].binary_search(&item).is_ok()
    }

    /// Items a user is ranked over at test time: everything outside their
    /// training and validation interactions.
    pub fn test_candidates(&self, user: usize) -> Vec<usize> {
        let valid = self.valid[user];
        (0..self.n_items())
            .filter(|&i| i == self.test[user] || (i != valid && !self.in_train(user, i)))
            .collect()
    }
}
