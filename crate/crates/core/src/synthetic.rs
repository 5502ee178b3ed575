//! Synthetic matrix-factorization experiment.
//!
//! A rank-d ground truth Z* = X* Y*ᵀ is sampled under Zipf-like cell weights,
//! an MSE factorization is fitted on the training cells, and test cells are
//! paired up into two-item ranking problems. For each pair we record whether
//! the model ordered it correctly and how uncertain it was, then correlate.

use std::f64::consts::PI;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::mc_dropout_predict;
use crate::error::{LiduError, Result};
use crate::eval::pearson;
use crate::models::loss::Triple;
use crate::models::{train_mse, IdMap, Matrix, MfModel, ModelShape, TrainConfig};
use crate::rng::{derive_seed, rng_from};
use crate::types::RankedPrediction;
use crate::uncertainty::{lidu_full, pointwise_uncertainty};

/// Largest training density accepted.
pub const MAX_DENSITY: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub density: f64,
    pub alpha: f64,
    pub test_size: usize,
    pub valid_size: usize,
    pub seeds: Vec<u64>,
    pub dropout_p: f64,
    pub passes: usize,
    pub sampling: SamplingScheme,
    pub train: TrainConfig,
}

/// How the weighted draw is dealt into train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// One draw for all three sets, dealt out by a seeded shuffle.
    #[default]
    Joint,
    /// Train first, then validation, then test from what remains.
    Sequential,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 500,
            d: 8,
            density: 0.04,
            alpha: 5.0,
            test_size: 1000,
            valid_size: 1000,
            seeds: (0..5).collect(),
            dropout_p: 0.2,
            passes: 20,
            sampling: SamplingScheme::default(),
            train: TrainConfig::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn train_size(&self) -> usize {
        (self.density * (self.n * self.n) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LiduError::InvalidConfig(m));
        if self.n == 0 || self.d == 0 {
            return bad(format!("n and d must be positive (n={}, d={})", self.n, self.d));
        }
        if !(self.density > 0.0 && self.density <= MAX_DENSITY) {
            return bad(format!("density {} outside (0, {MAX_DENSITY}]", self.density));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha {} must be a finite non-negative number", self.alpha));
        }
        if self.test_size < 2 || self.valid_size == 0 {
            return bad("need at least one test pair and one validation cell".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds given".into());
        }
        if !(self.dropout_p > 0.0 && self.dropout_p < 1.0) || self.passes < 2 {
            return bad(format!("dropout p={} T={} invalid", self.dropout_p, self.passes));
        }
        self.train.validate()?;
        if self.train_size() < 2 * self.n * self.d {
            warn!(
                "{} training cells for {} free parameters; the fit is underdetermined",
                self.train_size(),
                2 * self.n * self.d
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
}

/// X* = cos R_x + sin R_x, Y* = sin R_y − cos R_y with R uniform on [0, 2π).
pub fn generate_ground_truth(spec: &SyntheticSpec, seed: u64) -> GroundTruth {
    let (n, d) = (spec.n, spec.d);
    let mut rng = rng_from(seed, &[0x4754]);
    let mut draw = |f: fn(f64) -> f64| {
        let data = (0..n * d).map(|_| f(rng.random::<f64>() * 2.0 * PI)).collect();
        Matrix::from_vec(n, d, data)
    };
    let x = draw(|r| r.cos() + r.sin());
    let y = draw(|r| r.sin() - r.cos());
    let mut z = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            z.row_mut(i)[j] = crate::models::dot(x.row(i), y.row(j));
        }
    }
    GroundTruth { x, y, z }
}

/// Unnormalized sampling weight of cell (i, j), 0-based.
pub fn zipf_weight(i: usize, j: usize, alpha: f64) -> f64 {
    ((i + j + 1) as f64).powf(-alpha)
}

fn zipf_log_weight(i: usize, j: usize, alpha: f64) -> f64 {
    -alpha * ((i + j + 1) as f64).ln()
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<Cell>,
    pub valid: Vec<Cell>,
    pub test: Vec<Cell>,
}

/// Draws train, validation and test cells without replacement.
///
/// All cells are drawn in one weighted pass (Gumbel top-k, equivalent to
/// sequential sampling without replacement), then a seeded shuffle deals them
/// into the three sets, so every set follows the same frequency profile.
pub fn sample_splits(z: &Matrix, spec: &SyntheticSpec, seed: u64) -> Result<Splits> {
    let n = z.rows();
    let (n_train, n_valid, n_test) = (spec.train_size(), spec.valid_size, spec.test_size);
    let requested = n_train + n_valid + n_test;
    let available = n * z.cols();
    if requested > available {
        return Err(LiduError::InfeasibleSample { requested, available });
    }
    let mut rng = rng_from(seed, &[0x5350]);
    let mut keyed: Vec<(f64, Cell)> = Vec::with_capacity(available);
    for i in 0..n {
        for j in 0..z.cols() {
            let u: f64 = rng.random();
            // Gumbel(0, 1) via -ln(-ln u); u = 0 maps to -inf and is never picked first
            keyed.push((zipf_log_weight(i, j, spec.alpha) - (-u.ln()).ln(), (i, j)));
        }
    }
    let by_key = |a: &(f64, Cell), b: &(f64, Cell)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if requested < keyed.len() {
        keyed.select_nth_unstable_by(requested, by_key);
        keyed.truncate(requested);
    }
    keyed.sort_unstable_by(by_key);
    let mut cells: Vec<Cell> = keyed.into_iter().map(|(_, c)| c).collect();
    if spec.sampling == SamplingScheme::Joint {
        cells.shuffle(&mut rng);
    }
    let test = cells.split_off(n_train + n_valid);
    let valid = cells.split_off(n_train);
    Ok(Splits { train: cells, valid, test })
}

/// Consecutive disjoint pairs; a trailing odd cell is dropped.
pub fn pair_up(test: &[Cell]) -> Vec<(Cell, Cell)> {
    test.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// 1 when the predicted difference has the true sign, 0 when opposite, 0.5
/// when either difference is exactly zero.
pub fn pair_correctness(true_diff: f64, pred_diff: f64) -> f64 {
    if true_diff == 0.0 || pred_diff == 0.0 {
        0.5
    } else if (true_diff > 0.0) == (pred_diff > 0.0) {
        1.0
    } else {
        0.0
    }
}

pub fn pair_accuracy(model: &MfModel, pairs: &[(Cell, Cell)], z: &Matrix) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.5);
    }
    let mut total = 0.0;
    for &((i1, j1), (i2, j2)) in pairs {
        let truth = z.row(i1)[j1] - z.row(i2)[j2];
        let pred = model.score(i1, j1)? - model.score(i2, j2)?;
        total += pair_correctness(truth, pred);
    }
    Ok(total / pairs.len() as f64)
}

/// Everything measured on one test pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub lidu: f64,
    pub pointwise: f64,
    pub correct: f64,
    /// Mean log Zipf weight of the two cells.
    pub log_weight: f64,
}

pub fn score_pairs(
    model: &MfModel,
    pairs: &[(Cell, Cell)],
    z: &Matrix,
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<Vec<PairRecord>> {
    pairs
        .iter()
        .map(|&((i1, j1), (i2, j2))| {
            let a = mc_dropout_predict(model, i1, &[j1], spec.dropout_p, spec.passes, seed)?[0];
            let b = mc_dropout_predict(model, i2, &[j2], spec.dropout_p, spec.passes, seed)?[0];
            let pred = RankedPrediction::new(0, [(0, a), (1, b)])?;
            let truth = z.row(i1)[j1] - z.row(i2)[j2];
            let diff = model.score(i1, j1)? - model.score(i2, j2)?;
            Ok(PairRecord {
                lidu: lidu_full(&pred, 2)?.value,
                pointwise: pointwise_uncertainty(&pred, 2)?,
                correct: pair_correctness(truth, diff),
                log_weight: 0.5 * (zipf_log_weight(i1, j1, spec.alpha) + zipf_log_weight(i2, j2, spec.alpha)),
            })
        })
        .collect()
}

pub const LIDU: &str = "lidu";
pub const POINTWISE: &str = "pointwise";
pub const FREQ_QUARTILES: usize = 4;

/// Name of the LiDu row restricted to frequency quartile `q` (1 = rarest).
pub fn quartile_estimator(q: usize) -> String {
    format!("lidu_freq_q{q}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub density: f64,
    pub seed: u64,
    pub estimator: String,
    /// Empty when correctness is constant over the pairs.
    pub pearson_r: Option<f64>,
    pub accuracy_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub fn extend(&mut self, other: ExperimentTable) {
        self.rows.extend(other.rows);
    }

    pub fn select<'a>(&'a self, estimator: &'a str, n: usize, density: f64) -> impl Iterator<Item = &'a ExperimentRow> {
        self.rows
            .iter()
            .filter(move |r| r.estimator == estimator && r.n == n && r.density == density)
    }

    /// Mean Pearson r over seeds, skipping undefined values.
    pub fn mean_r(&self, estimator: &str, n: usize, density: f64) -> Option<f64> {
        let rs: Vec<f64> = self.select(estimator, n, density).filter_map(|r| r.pearson_r).collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn row(spec: &SyntheticSpec, seed: u64, estimator: String, r: Option<f64>, records: &[PairRecord]) -> ExperimentRow {
    let accuracy_mean = records.iter().map(|p| p.correct).sum::<f64>() / records.len().max(1) as f64;
    ExperimentRow { n: spec.n, density: spec.density, seed, estimator, pearson_r: r, accuracy_mean }
}

/// Rows for one seed: overall LiDu and point-wise correlations plus LiDu per
/// frequency quartile.
pub fn seed_rows(spec: &SyntheticSpec, seed: u64, records: &[PairRecord]) -> Vec<ExperimentRow> {
    let correct: Vec<f64> = records.iter().map(|p| p.correct).collect();
    let lidu: Vec<f64> = records.iter().map(|p| p.lidu).collect();
    let point: Vec<f64> = records.iter().map(|p| p.pointwise).collect();
    let mut rows = vec![
        row(spec, seed, LIDU.into(), pearson(&lidu, &correct), records),
        row(spec, seed, POINTWISE.into(), pearson(&point, &correct), records),
    ];
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].log_weight.total_cmp(&records[b].log_weight).then(a.cmp(&b)));
    for q in 0..FREQ_QUARTILES {
        let lo = q * order.len() / FREQ_QUARTILES;
        let hi = (q + 1) * order.len() / FREQ_QUARTILES;
        let part: Vec<PairRecord> = order[lo..hi].iter().map(|&k| records[k]).collect();
        let x: Vec<f64> = part.iter().map(|p| p.lidu).collect();
        let y: Vec<f64> = part.iter().map(|p| p.correct).collect();
        rows.push(row(spec, seed, quartile_estimator(q + 1), pearson(&x, &y), &part));
    }
    rows
}

/// Data, fitted model and per-pair records for one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub truth: GroundTruth,
    pub splits: Splits,
    pub model: MfModel,
    pub records: Vec<PairRecord>,
}

pub fn run_seed(spec: &SyntheticSpec, seed: u64) -> Result<SeedRun> {
    let truth = generate_ground_truth(spec, seed);
    let splits = sample_splits(&truth.z, spec, seed)?;
    let triples = |cells: &[Cell]| -> Vec<Triple> { cells.iter().map(|&(i, j)| Triple::new(i, j, truth.z.row(i)[j])).collect() };
    let shape = ModelShape { users: IdMap::sequential(spec.n), items: IdMap::sequential(spec.n), dim: spec.d };
    let cfg = TrainConfig { seed: derive_seed(seed, &[0x4d46]), ..spec.train };
    let model = train_mse(&shape, &triples(&splits.train), &triples(&splits.valid), &cfg)?.model;
    let pairs = pair_up(&splits.test);
    let records = score_pairs(&model, &pairs, &truth.z, spec, derive_seed(seed, &[0x4d43]))?;
    Ok(SeedRun { seed, truth, splits, model, records })
}

/// Runs every seed of `spec` (in parallel) and tabulates the correlations.
pub fn run_synthetic_experiment(spec: &SyntheticSpec) -> Result<ExperimentTable> {
    spec.validate()?;
    let per_seed: Vec<Vec<ExperimentRow>> = spec
        .seeds
        .par_iter()
        .map(|&seed| run_seed(spec, seed).map(|run| seed_rows(spec, seed, &run.records)))
        .collect::<Result<_>>()?;
    Ok(ExperimentTable { rows: per_seed.into_iter().flatten().collect() })
}

/// Repeats the experiment at each training density.
pub fn run_density_sweep(spec: &SyntheticSpec, densities: &[f64]) -> Result<ExperimentTable> {
    let mut table = ExperimentTable::default();
    for &density in densities {
        table.extend(run_synthetic_experiment(&SyntheticSpec { density, ..spec.clone() })?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec { n: 40, d: 2, density: 0.04, test_size: 20, valid_size: 10, seeds: vec![1], ..Default::default() }
    }

    #[test]
    fn ground_truth_bounds_and_determinism() {
        let spec = small();
        let g = generate_ground_truth(&spec, 3);
        let root2 = 2f64.sqrt() + 1e-12;
        assert!(g.x.as_slice().iter().chain(g.y.as_slice()).all(|v| v.abs() <= root2));
        assert!(g.z.as_slice().iter().all(|v| v.abs() <= 2.0 * spec.d as f64 + 1e-12));
        assert_eq!(g, generate_ground_truth(&spec, 3));
        assert_ne!(g.z, generate_ground_truth(&spec, 4).z);
        let (i, j) = (5, 7);
        assert_eq!(g.z.row(i)[j], crate::models::dot(g.x.row(i), g.y.row(j)));
    }

    #[test]
    fn splits_disjoint_and_sized() {
        let spec = small();
        let g = generate_ground_truth(&spec, 0);
        let s = sample_splits(&g.z, &spec, 0).unwrap();
        assert_eq!(s.train.len(), 64);
        assert_eq!(s.valid.len(), 10);
        assert_eq!(s.test.len(), 20);
        let all: std::collections::HashSet<_> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        assert_eq!(all.len(), 94);
        assert_eq!(s, sample_splits(&g.z, &spec, 0).unwrap());
    }

    #[test]
    fn infeasible_split_is_rejected() {
        let spec = SyntheticSpec { n: 5, test_size: 20, valid_size: 10, ..small() };
        let g = generate_ground_truth(&spec, 0);
        assert!(matches!(sample_splits(&g.z, &spec, 0), Err(LiduError::InfeasibleSample { requested: 31, available: 25 })));
    }

    #[test]
    fn zipf_weights() {
        assert_eq!(zipf_weight(3, 9, 0.0), 1.0);
        assert_eq!(zipf_weight(0, 0, 5.0), 1.0);
        assert_eq!(zipf_weight(1, 0, 5.0), 1.0 / 32.0);
        assert!(zipf_weight(2, 3, 5.0) < zipf_weight(2, 2, 5.0));
    }

    #[test]
    fn head_cell_is_drawn_most_often() {
        // Empirical inclusion frequency across seeds.
        let spec = SyntheticSpec { n: 10, density: 0.04, test_size: 2, valid_size: 1, ..small() };
        let z = Matrix::zeros(10, 10);
        let mut hits = vec![0usize; 100];
        for seed in 0..400 {
            let s = sample_splits(&z, &spec, seed).unwrap();
            for &(i, j) in s.train.iter().chain(&s.valid).chain(&s.test) {
                hits[i * 10 + j] += 1;
            }
        }
        let top = hits.iter().enumerate().max_by_key(|&(k, &h)| (h, std::cmp::Reverse(k))).unwrap().0;
        assert_eq!(top, 0);
        assert_eq!(hits[0], 400);
    }

    #[test]
    fn uniform_when_alpha_is_zero() {
        let spec = SyntheticSpec { n: 4, density: 0.04, alpha: 0.0, test_size: 2, valid_size: 1, ..small() };
        let z = Matrix::zeros(4, 4);
        let mut hits = vec![0usize; 16];
        let trials = 8000;
        for seed in 0..trials {
            let s = sample_splits(&z, &spec, seed).unwrap();
            for &(i, j) in s.train.iter().chain(&s.valid).chain(&s.test) {
                hits[i * 4 + j] += 1;
            }
        }
        // each cell is included with probability 4/16
        let expect = trials as f64 * 0.25;
        let sd = (trials as f64 * 0.25 * 0.75).sqrt();
        for h in hits {
            assert!((h as f64 - expect).abs() < 5.0 * sd, "{h} vs {expect}");
        }
    }

    #[test]
    fn correctness_rule() {
        assert_eq!(pair_correctness(1.0, 2.0), 1.0);
        assert_eq!(pair_correctness(-1.0, 2.0), 0.0);
        assert_eq!(pair_correctness(0.0, 2.0), 0.5);
        assert_eq!(pair_correctness(1.0, 0.0), 0.5);
    }

    fn truth_model(g: &GroundTruth, n: usize) -> MfModel {
        MfModel::from_embeddings(IdMap::sequential(n), IdMap::sequential(n), g.x.clone(), g.y.clone()).unwrap()
    }

    #[test]
    fn pair_accuracy_examples() {
        let spec = small();
        let g = generate_ground_truth(&spec, 2);
        let s = sample_splits(&g.z, &spec, 2).unwrap();
        let pairs = pair_up(&s.test);
        let m = truth_model(&g, spec.n);
        assert_eq!(pair_accuracy(&m, &pairs, &g.z).unwrap(), 1.0);
        let mut neg = m.clone();
        neg.user_emb.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        assert_eq!(pair_accuracy(&neg, &pairs, &g.z).unwrap(), 0.0);
        let mut flat = m.clone();
        flat.user_emb.fill(0.0);
        assert_eq!(pair_accuracy(&flat, &pairs, &g.z).unwrap(), 0.5);
    }

    #[test]
    fn odd_test_cell_dropped() {
        assert_eq!(pair_up(&[(0, 0), (1, 1), (2, 2)]), vec![((0, 0), (1, 1))]);
    }

    #[test]
    fn density_cap() {
        assert!(SyntheticSpec { density: 2.0, ..small() }.validate().is_err());
        assert!(SyntheticSpec { density: 0.0, ..small() }.validate().is_err());
        assert!(SyntheticSpec { density: 0.04, ..small() }.validate().is_ok());
    }

    #[test]
    fn experiment_table_shape() {
        let spec = SyntheticSpec { seeds: vec![0, 1], ..small() };
        let table = run_synthetic_experiment(&spec).unwrap();
        assert_eq!(table.rows.len(), 2 * (2 + FREQ_QUARTILES));
        assert_eq!(table.select(LIDU, 40, 0.04).count(), 2);
        assert_eq!(table, run_synthetic_experiment(&spec).unwrap());
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,density,seed,estimator,pearson_r,accuracy_mean\n"));
        assert_eq!(text.lines().count(), 1 + table.rows.len());
    }
}
