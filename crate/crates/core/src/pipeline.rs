//! End-to-end evaluation on an implicit-feedback log: ingest, split, train
//! BPR models, score every user with each uncertainty backend and baseline,
//! and measure how well each estimator tracks per-user NDCG.

use std::collections::BTreeMap;
use std::io::Write;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{interest_dynamism, list_diversity, quantile_group_means, GroupMean, KeyedValue};
use crate::backends::{ensemble_predict, gaussian_head_predict, mc_dropout_predict};
use crate::baselines::{negate_for_comparison, nqc, smv, wgraph_all, GraphVariant, TopNScores, DEFAULT_PRUNE_QUANTILE};
use crate::data::{filter_ratings, k_core, leave_one_out, load_interactions, IndexedSplit, RawLogSpec};
use crate::error::{LiduError, Result};
use crate::eval::{ndcg_at_k, summarize, target_rank, win_rate_delta, DeltaMode, EstimatorReport, MetricSummary};
use crate::models::loss::Triple;
use crate::models::{
    train_bpr, train_gaussian_nll, user_mean_loss, LossKind, MfModel, NllOptions, TrainConfig, TrainReport,
};
use crate::rng::{derive_seed, rng_from};
use crate::types::{DatasetSplit, LiduConfig, PositionBias, RankedPrediction, ScoreDistribution};
use crate::uncertainty::{lidu_topn, pointwise_uncertainty};

pub const LIDU_DP: &str = "lidu_dp";
pub const LIDU_EN: &str = "lidu_en";
pub const LIDU_VB: &str = "lidu_vb";
pub const LOSS: &str = "loss";
pub const SMV: &str = "smv";
pub const NQC: &str = "nqc";
pub const POINTWISE: &str = "pointwise";

/// Estimator columns in report order.
pub fn estimator_names() -> Vec<String> {
    let mut names: Vec<String> = [LIDU_DP, LIDU_EN, LIDU_VB, LOSS, SMV, NQC].map(String::from).to_vec();
    names.extend(GraphVariant::ALL.iter().map(|v| wgraph_name(*v)));
    names.push(POINTWISE.into());
    names
}

pub fn wgraph_name(v: GraphVariant) -> String {
    format!("wgraph_{}", v.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dim: usize,
    pub train: TrainConfig,
    /// Models in the deep ensemble; the first one is the evaluated model.
    pub ensemble_size: usize,
    /// Sampled zero-target negatives per positive when fitting the variance head.
    pub vb_negatives: usize,
    pub n_top: usize,
    pub l_max: usize,
    pub dropout_p: f64,
    pub passes: usize,
    pub position_bias: PositionBias,
    pub ndcg_k: usize,
    pub delta_frac: f64,
    pub delta_mode: DeltaMode,
    pub prune_quantile: f64,
    pub activeness_threshold: usize,
    /// (N, L) grid evaluated for the MC-dropout backend; empty to skip.
    pub sweep_n: Vec<usize>,
    pub sweep_l: Vec<usize>,
    pub analysis_groups: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 64,
            train: TrainConfig::default(),
            ensemble_size: 5,
            vb_negatives: 1,
            n_top: 100,
            l_max: 1000,
            dropout_p: 0.2,
            passes: 50,
            position_bias: PositionBias::Discount,
            ndcg_k: 1000,
            delta_frac: 0.05,
            delta_mode: DeltaMode::Rank,
            prune_quantile: DEFAULT_PRUNE_QUANTILE,
            activeness_threshold: 5,
            sweep_n: Vec::new(),
            sweep_l: Vec::new(),
            analysis_groups: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.lidu(self.n_top, self.l_max).validate()?;
        self.train.validate()?;
        let bad = |m: &str| Err(LiduError::InvalidConfig(m.into()));
        if self.dim == 0 {
            return bad("embedding dimension must be positive");
        }
        if self.ensemble_size < 2 {
            return bad("the ensemble needs at least two models");
        }
        if self.ndcg_k == 0 {
            return bad("ndcg_k must be positive");
        }
        if !(self.delta_frac >= 0.0) || !(0.0..=1.0).contains(&self.prune_quantile) {
            return bad("delta_frac must be >= 0 and prune_quantile in [0, 1]");
        }
        if self.analysis_groups == 0 {
            return bad("analysis_groups must be positive");
        }
        for &n in &self.sweep_n {
            for &l in &self.sweep_l {
                self.lidu(n, l).validate()?;
            }
        }
        Ok(())
    }

    fn lidu(&self, n_top: usize, l_max: usize) -> LiduConfig {
        LiduConfig {
            n_top,
            l_max,
            dropout_p: self.dropout_p,
            n_passes: self.passes,
            position_bias: self.position_bias,
            ..LiduConfig::default()
        }
    }

    fn member_config(&self, k: usize) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, &[0x454e, k as u64]), ..self.train }
    }
}

/// Load, filter, k-core and split a raw log.
pub fn ingest(spec: &RawLogSpec) -> Result<DatasetSplit> {
    let mut data = load_interactions(spec)?;
    if let Some(t) = spec.rating_threshold {
        data = filter_ratings(data, t)?;
    }
    let data = k_core(data, spec.k_core);
    let split = leave_one_out(&data);
    if split.test.is_empty() {
        return Err(LiduError::NotEnoughData(format!("no user in {} survives filtering", spec.path.display())));
    }
    Ok(split)
}

#[derive(Debug, Clone)]
pub struct Models {
    /// Independently seeded BPR models; `ensemble[0]` is the evaluated model.
    pub ensemble: Vec<MfModel>,
    /// The evaluated model plus a variance tower fitted with its mean frozen.
    pub vb: MfModel,
    pub reports: Vec<TrainReport>,
}

impl Models {
    pub fn base(&self) -> &MfModel {
        &self.ensemble[0]
    }
}

/// Implicit 0/1 targets for the variance head: every training positive,
/// plus `negatives` unobserved items per positive.
fn vb_triples(split: &IndexedSplit, cfg: &PipelineConfig) -> (Vec<Triple>, Vec<Triple>) {
    let n_items = split.n_items();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for u in 0..split.n_users() {
        let mut rng = rng_from(cfg.seed, &[0x5642, u as u64]);
        let held = [split.valid[u], split.test[u]];
        let negative = |rng: &mut crate::rng::Rng| loop {
            let j = rng.random_range(0..n_items);
            if !split.in_train(u, j) && !held.contains(&j) {
                return j;
            }
        };
        let has_negatives = split.train_sorted[u].len() + 2 < n_items;
        let per_positive = if has_negatives { cfg.vb_negatives } else { 0 };
        for &i in &split.train[u] {
            train.push(Triple::new(u, i, 1.0));
            for _ in 0..per_positive {
                train.push(Triple::new(u, negative(&mut rng), 0.0));
            }
        }
        valid.push(Triple::new(u, split.valid[u], 1.0));
        if has_negatives {
            valid.push(Triple::new(u, negative(&mut rng), 0.0));
        }
    }
    (train, valid)
}

pub fn train_models(split: &IndexedSplit, cfg: &PipelineConfig) -> Result<Models> {
    cfg.validate()?;
    let trained: Vec<_> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|k| train_bpr(split, cfg.dim, &cfg.member_config(k)))
        .collect::<Result<_>>()?;
    let mut reports: Vec<TrainReport> = trained.iter().map(|t| t.report.clone()).collect();
    for (k, r) in reports.iter().enumerate() {
        info!("ensemble member {k}: {} epochs, best {} (ndcg {:.4})", r.epochs_run, r.best_epoch, r.best_valid);
    }
    let ensemble: Vec<MfModel> = trained.into_iter().map(|t| t.model).collect();
    let (train, valid) = vb_triples(split, cfg);
    let init = ensemble[0]
        .clone()
        .with_variance_tower(cfg.train.init_std, derive_seed(cfg.seed, &[0x5642]));
    let vb_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[0x5642, 1]), ..cfg.train };
    let vb = train_gaussian_nll(init, &train, &valid, &vb_cfg, NllOptions { freeze_mean: true })?;
    info!("variance head: {} epochs, best nll {:.4}", vb.report.epochs_run, vb.report.best_valid);
    reports.push(vb.report);
    Ok(Models { ensemble, vb: vb.model, reports })
}

/// Everything computed for one user.
#[derive(Debug, Clone, PartialEq)]
struct UserScores {
    ndcg: f64,
    estimates: Vec<f64>,
    sweep: Vec<f64>,
    dynamism: Option<f64>,
    diversity: f64,
}

/// Per-user NDCG, estimator values and profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTable {
    pub users: Vec<String>,
    pub n_train: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub estimators: Vec<String>,
    /// `columns[e][u]`, in the orientation higher = worse expected performance.
    pub columns: Vec<Vec<f64>>,
    /// (N, L) grid points and the MC-dropout LiDu of every user at each.
    pub sweep: Vec<((usize, usize), Vec<f64>)>,
    pub dynamism: Vec<Option<f64>>,
    pub diversity: Vec<f64>,
}

fn ranked(user: usize, cands: &[usize], dists: &[ScoreDistribution]) -> Result<RankedPrediction> {
    RankedPrediction::from_parts(user, cands, dists)
}

/// Users with fewer than two candidates have no ranking to judge; they are skipped.
fn score_user(
    split: &IndexedSplit,
    models: &Models,
    cfg: &PipelineConfig,
    grid: &[(usize, usize)],
    u: usize,
) -> Result<Option<UserScores>> {
    let base = models.base();
    let cands = split.test_candidates(u);
    if cands.len() < 2 {
        return Ok(None);
    }
    let all_scores = base.score_all(u)?;
    let rank = target_rank(&all_scores, split.test[u], |j| {
        j != split.test[u] && (j == split.valid[u] || split.in_train(u, j))
    });
    let ndcg = ndcg_at_k(rank, cfg.ndcg_k);

    let l_max = cfg.l_max.min(cands.len());
    let n_top = cfg.n_top.min(l_max);
    let lidu_cfg = cfg.lidu(n_top, l_max);

    let dp = ranked(u, &cands, &mc_dropout_predict(base, u, &cands, cfg.dropout_p, cfg.passes, derive_seed(cfg.seed, &[0x4450]))?)?;
    let en = ranked(u, &cands, &ensemble_predict(&models.ensemble, u, &cands)?)?;
    let vb = ranked(u, &cands, &gaussian_head_predict(&models.vb, u, &cands)?)?;

    let mut head: Vec<(usize, f64)> = cands.iter().map(|&j| (j, all_scores[j])).collect();
    head.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    head.truncate(n_top);
    let head_ids: Vec<usize> = head.iter().map(|h| h.0).collect();
    let top = TopNScores::new(head.iter().map(|h| h.1).collect(), head_ids.clone())?;
    let graph = wgraph_all(&head_ids, &base.item_emb, cfg.prune_quantile)?;
    let qpp = negate_for_comparison(&[smv(&top), nqc(&top)]);

    let mut estimates = vec![
        lidu_topn(&dp, &lidu_cfg)?.value,
        lidu_topn(&en, &lidu_cfg)?.value,
        lidu_topn(&vb, &lidu_cfg)?.value,
        user_mean_loss(base, split, u, LossKind::Bpr, derive_seed(cfg.seed, &[0x4c4f]))?,
        qpp[0],
        qpp[1],
    ];
    estimates.extend(negate_for_comparison(&GraphVariant::ALL.map(|v| graph.get(v))));
    estimates.push(pointwise_uncertainty(&dp, n_top)?);

    let sweep = grid
        .iter()
        .map(|&(n, l)| {
            let l = l.min(cands.len());
            lidu_topn(&dp, &cfg.lidu(n.min(l), l)).map(|v| v.value)
        })
        .collect::<Result<_>>()?;

    Ok(Some(UserScores {
        ndcg,
        estimates,
        sweep,
        dynamism: interest_dynamism(&split.train[u], &base.item_emb).ok(),
        diversity: list_diversity(&head_ids, &base.item_emb)?,
    }))
}

/// Scores every user. Users are processed in parallel; each owns its own
/// random streams, so the table does not depend on scheduling.
pub fn score_users(split: &IndexedSplit, models: &Models, cfg: &PipelineConfig) -> Result<UserTable> {
    cfg.validate()?;
    let grid: Vec<(usize, usize)> = cfg
        .sweep_n
        .iter()
        .flat_map(|&n| cfg.sweep_l.iter().map(move |&l| (n, l)))
        .collect();
    let scored: Vec<Option<UserScores>> = (0..split.n_users())
        .into_par_iter()
        .map(|u| score_user(split, models, cfg, &grid, u))
        .collect::<Result<_>>()?;
    let kept: Vec<usize> = (0..scored.len()).filter(|&u| scored[u].is_some()).collect();
    if kept.len() < scored.len() {
        warn!("skipped {} users with fewer than two candidate items", scored.len() - kept.len());
    }
    if kept.is_empty() {
        return Err(LiduError::NotEnoughData("no user has two or more candidate items".into()));
    }
    let rows: Vec<UserScores> = scored.into_iter().flatten().collect();
    let estimators = estimator_names();
    let columns = (0..estimators.len()).map(|e| rows.iter().map(|r| r.estimates[e]).collect()).collect();
    let sweep = grid
        .iter()
        .enumerate()
        .map(|(g, &nl)| (nl, rows.iter().map(|r| r.sweep[g]).collect()))
        .collect();
    Ok(UserTable {
        users: kept.iter().map(|&u| split.users.id(u).to_string()).collect(),
        n_train: kept.iter().map(|&u| split.train[u].len()).collect(),
        ndcg: rows.iter().map(|r| r.ndcg).collect(),
        estimators,
        columns,
        sweep,
        dynamism: rows.iter().map(|r| r.dynamism).collect(),
        diversity: rows.iter().map(|r| r.diversity).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_top: usize,
    pub l_max: usize,
    pub win_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: PipelineConfig,
    pub n_users: usize,
    pub mean_ndcg: f64,
    pub estimators: BTreeMap<String, MetricSummary>,
    /// The W-Graph variant with the largest |Pearson r|.
    pub best_wgraph: Option<String>,
    pub active: BTreeMap<String, MetricSummary>,
    pub inactive: BTreeMap<String, MetricSummary>,
    pub sweep: Vec<SweepPoint>,
}

impl UserTable {
    pub fn report(&self, estimator: &str) -> Result<EstimatorReport> {
        let e = self
            .estimators
            .iter()
            .position(|n| n == estimator)
            .ok_or_else(|| LiduError::InvalidConfig(format!("unknown estimator {estimator}")))?;
        EstimatorReport::from_columns(&self.users, &self.columns[e], &self.ndcg)
    }

    fn subset_summaries(&self, cfg: &PipelineConfig, keep: impl Fn(usize) -> bool) -> Result<BTreeMap<String, MetricSummary>> {
        let idx: Vec<usize> = (0..self.users.len()).filter(|&u| keep(u)).collect();
        let users: Vec<String> = idx.iter().map(|&u| self.users[u].clone()).collect();
        let ndcg: Vec<f64> = idx.iter().map(|&u| self.ndcg[u]).collect();
        self.estimators
            .iter()
            .zip(&self.columns)
            .map(|(name, col)| {
                let est: Vec<f64> = idx.iter().map(|&u| col[u]).collect();
                let report = EstimatorReport::from_columns(&users, &est, &ndcg)?;
                Ok((name.clone(), summarize(&report, cfg.delta_frac, cfg.delta_mode)))
            })
            .collect()
    }

    pub fn summary(&self, cfg: &PipelineConfig) -> Result<RunSummary> {
        let estimators = self.subset_summaries(cfg, |_| true)?;
        let best_wgraph = GraphVariant::ALL
            .iter()
            .map(|&v| wgraph_name(v))
            .filter_map(|name| estimators[&name].pearson_r.map(|r| (name, r.abs())))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(name, _)| name);
        let threshold = cfg.activeness_threshold;
        let sweep = self
            .sweep
            .iter()
            .map(|&((n_top, l_max), ref col)| {
                let report = EstimatorReport::from_columns(&self.users, col, &self.ndcg)?;
                Ok(SweepPoint { n_top, l_max, win_rate: win_rate_delta(&report, cfg.delta_frac, true, cfg.delta_mode) })
            })
            .collect::<Result<_>>()?;
        Ok(RunSummary {
            config: cfg.clone(),
            n_users: self.users.len(),
            mean_ndcg: self.ndcg.iter().sum::<f64>() / self.ndcg.len().max(1) as f64,
            best_wgraph,
            active: self.subset_summaries(cfg, |u| self.n_train[u] >= threshold)?,
            inactive: self.subset_summaries(cfg, |u| self.n_train[u] < threshold)?,
            estimators,
            sweep,
        })
    }

    /// Long-format per-user report: user_id, estimator_name, estimate, ndcg.
    pub fn write_estimates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "estimator_name", "estimate", "ndcg"])?;
        for (name, col) in self.estimators.iter().zip(&self.columns) {
            for (u, user) in self.users.iter().enumerate() {
                w.write_record([user.as_str(), name.as_str(), &col[u].to_string(), &self.ndcg[u].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean log MC-dropout LiDu per interest-dynamism quartile, most dynamic
    /// group excluded. Users with a single training item are skipped.
    pub fn dynamism_groups(&self, cfg: &PipelineConfig) -> Result<Vec<GroupMean>> {
        let lidu = &self.columns[0];
        let values: Vec<KeyedValue> = (0..self.users.len())
            .filter_map(|u| {
                self.dynamism[u].map(|key| KeyedValue { user: self.users[u].clone(), key, lidu: lidu[u] })
            })
            .collect();
        quantile_group_means(&values, cfg.analysis_groups, true)
    }

    /// Mean log MC-dropout LiDu per top-N list-diversity quartile.
    pub fn diversity_groups(&self, cfg: &PipelineConfig) -> Result<Vec<GroupMean>> {
        let lidu = &self.columns[0];
        let values: Vec<KeyedValue> = (0..self.users.len())
            .map(|u| KeyedValue { user: self.users[u].clone(), key: self.diversity[u], lidu: lidu[u] })
            .collect();
        quantile_group_means(&values, cfg.analysis_groups, false)
    }
}
