use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{bpr_batch, mse_batch, neg_log_sigmoid, nll_batch, BprTriple, Grads, Triple};
use super::{MfModel, ModelShape, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::data::IndexedSplit;
use crate::error::{LiduError, Result};
use crate::eval::{ndcg_at_k, target_rank};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub l2: f64,
    /// Standard deviation of the Gaussian initialization.
    pub init_std: f64,
    /// Cutoff of the validation NDCG used by BPR early stopping.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            patience: 10,
            max_epochs: 500,
            seed: 0,
            l2: 0.0,
            init_std: 0.1,
            eval_k: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.patience == 0 || self.l2 < 0.0 {
            return Err(LiduError::InvalidConfig(format!("bad training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 0 when the initialization was never beaten.
    pub best_epoch: usize,
    pub best_valid: f64,
    pub history: Vec<EpochStat>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MfModel,
    pub report: TrainReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NllOptions {
    /// Train only the variance tower.
    pub freeze_mean: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tables {
    Mean,
    Variance,
    All,
}

impl Tables {
    fn sizes(self, m: &MfModel) -> Vec<usize> {
        let mean = [m.user_emb.as_slice().len(), m.item_emb.as_slice().len()];
        let var = m
            .variance
            .as_ref()
            .map(|v| [v.user_emb.as_slice().len(), v.item_emb.as_slice().len()]);
        match self {
            Tables::Mean => mean.to_vec(),
            Tables::Variance => var.unwrap().to_vec(),
            Tables::All => mean.into_iter().chain(var.unwrap()).collect(),
        }
    }
}

fn adam_step(model: &mut MfModel, adam: &mut Adam, g: &Grads, tables: Tables) {
    match tables {
        Tables::Mean => adam.step(
            &mut [model.user_emb.as_mut_slice(), model.item_emb.as_mut_slice()],
            &[g.user.as_slice(), g.item.as_slice()],
        ),
        Tables::Variance => {
            let t = model.variance.as_mut().unwrap();
            adam.step(
                &mut [t.user_emb.as_mut_slice(), t.item_emb.as_mut_slice()],
                &[g.var_user.as_ref().unwrap().as_slice(), g.var_item.as_ref().unwrap().as_slice()],
            )
        }
        Tables::All => {
            let t = model.variance.as_mut().unwrap();
            adam.step(
                &mut [
                    model.user_emb.as_mut_slice(),
                    model.item_emb.as_mut_slice(),
                    t.user_emb.as_mut_slice(),
                    t.item_emb.as_mut_slice(),
                ],
                &[
                    g.user.as_slice(),
                    g.item.as_slice(),
                    g.var_user.as_ref().unwrap().as_slice(),
                    g.var_item.as_ref().unwrap().as_slice(),
                ],
            )
        }
    }
}

/// Epoch loop shared by all trainers: runs `epoch` until the validation
/// metric stops improving for `patience` epochs and returns the best
/// checkpoint (the initialization counts as epoch 0).
fn fit(
    mut model: MfModel,
    cfg: &TrainConfig,
    tables: Tables,
    higher_is_better: bool,
    mut epoch: impl FnMut(&mut MfModel, &mut Adam, &mut Grads, usize) -> f64,
    validate: impl Fn(&MfModel) -> f64,
) -> Result<Trained> {
    cfg.validate()?;
    let mut best_valid = validate(&model);
    let mut report = TrainReport { best_valid, ..Default::default() };
    if cfg.max_epochs == 0 {
        return Ok(Trained { model, report });
    }
    let mut adam = Adam::new(cfg.learning_rate, &tables.sizes(&model));
    let mut grads = Grads::zeros_like(&model);
    let mut best = model.clone();
    let mut stale = 0;
    let better = |a: f64, b: f64| if higher_is_better { a > b } else { a < b };
    for e in 1..=cfg.max_epochs {
        let train_loss = epoch(&mut model, &mut adam, &mut grads, e);
        if !train_loss.is_finite() || !model.is_finite() {
            return Err(LiduError::Divergence { epoch: e, loss: train_loss });
        }
        let valid = validate(&model);
        debug!("epoch {e}: train {train_loss:.6} valid {valid:.6}");
        report.history.push(EpochStat { epoch: e, train_loss, valid });
        report.epochs_run = e;
        if better(valid, best_valid) || (report.best_epoch == 0 && !best_valid.is_finite()) {
            best_valid = valid;
            best = model.clone();
            report.best_epoch = e;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    report.best_valid = best_valid;
    Ok(Trained { model: best, report })
}

/// Runs one pass over `data` in a seeded random order, one Adam step per batch.
fn minibatch_epoch<T: Copy>(
    model: &mut MfModel,
    adam: &mut Adam,
    grads: &mut Grads,
    data: &[T],
    cfg: &TrainConfig,
    epoch: usize,
    tables: Tables,
    loss: impl Fn(&MfModel, &[T], &mut Grads) -> f64,
) -> f64 {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from(cfg.seed, &[0x5348_5546, epoch as u64]));
    let mut total = 0.0;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for chunk in order.chunks(cfg.batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| data[i]));
        grads.clear();
        total += loss(model, &batch, grads) * batch.len() as f64;
        adam_step(model, adam, grads, tables);
    }
    total / data.len().max(1) as f64
}

fn mean_sq_error(model: &MfModel, data: &[Triple]) -> f64 {
    mse_batch(model, data, 0.0, None)
}

/// Factorizes explicit targets under squared error.
pub fn train_mse(shape: &ModelShape, train: &[Triple], valid: &[Triple], cfg: &TrainConfig) -> Result<Trained> {
    if train.is_empty() || valid.is_empty() {
        return Err(LiduError::NotEnoughData("train and validation sets must be non-empty".into()));
    }
    let model = MfModel::random(shape, cfg.init_std, cfg.seed);
    fit(
        model,
        cfg,
        Tables::Mean,
        false,
        |m, adam, g, e| {
            minibatch_epoch(m, adam, g, train, cfg, e, Tables::Mean, |m, b, g| mse_batch(m, b, cfg.l2, Some(g)))
        },
        |m| mean_sq_error(m, valid),
    )
}

/// Mean NDCG@k of each user's validation item, ranked among items outside
/// their training set.
pub fn validation_ndcg(model: &MfModel, split: &IndexedSplit, k: usize) -> f64 {
    let n = split.n_users();
    let total: f64 = (0..n)
        .map(|u| {
            let scores = model.score_all(u).expect("user index in range");
            let rank = target_rank(&scores, split.valid[u], |j| split.in_train(u, j));
            ndcg_at_k(rank, k)
        })
        .sum();
    total / n.max(1) as f64
}

/// Uniform negative outside the user's training items; `None` if there is none.
fn sample_negative(split: &IndexedSplit, user: usize, rng: &mut impl Rng) -> Option<usize> {
    let n_items = split.n_items();
    if split.train_sorted[user].len() >= n_items {
        return None;
    }
    loop {
        let j = rng.random_range(0..n_items);
        if !split.in_train(user, j) {
            return Some(j);
        }
    }
}

fn bpr_epoch_triples(split: &IndexedSplit, seed: u64, epoch: usize) -> Vec<BprTriple> {
    let mut rng = rng_from(seed, &[0x4e45_47, epoch as u64]);
    let mut out = Vec::new();
    for (user, items) in split.train.iter().enumerate() {
        for &pos in items {
            if let Some(neg) = sample_negative(split, user, &mut rng) {
                out.push(BprTriple { user, pos, neg });
            }
        }
    }
    out
}

/// Implicit-feedback factorization under the BPR pairwise loss, one fresh
/// negative per positive per epoch, early-stopped on validation NDCG@k.
pub fn train_bpr(split: &IndexedSplit, dim: usize, cfg: &TrainConfig) -> Result<Trained> {
    for (u, items) in split.train.iter().enumerate() {
        if items.is_empty() {
            warn!("user {} has no training positives; skipped", split.users.id(u));
        }
    }
    let shape = ModelShape { users: split.users.clone(), items: split.items.clone(), dim };
    let model = MfModel::random(&shape, cfg.init_std, cfg.seed);
    fit(
        model,
        cfg,
        Tables::Mean,
        true,
        |m, adam, g, e| {
            let triples = bpr_epoch_triples(split, cfg.seed, e);
            minibatch_epoch(m, adam, g, &triples, cfg, e, Tables::Mean, |m, b, g| bpr_batch(m, b, cfg.l2, Some(g)))
        },
        |m| validation_ndcg(m, split, cfg.eval_k),
    )
}

/// Fits mean and log-variance towers under the Gaussian negative
/// log-likelihood, early-stopped on validation NLL. `init` must carry a
/// variance tower.
pub fn train_gaussian_nll(
    init: MfModel,
    train: &[Triple],
    valid: &[Triple],
    cfg: &TrainConfig,
    opts: NllOptions,
) -> Result<Trained> {
    if init.variance.is_none() {
        return Err(LiduError::MissingVarianceTower);
    }
    if train.is_empty() || valid.is_empty() {
        return Err(LiduError::NotEnoughData("train and validation sets must be non-empty".into()));
    }
    let tables = if opts.freeze_mean { Tables::Variance } else { Tables::All };
    let freeze = opts.freeze_mean;
    fit(
        init,
        cfg,
        tables,
        false,
        |m, adam, g, e| {
            minibatch_epoch(m, adam, g, train, cfg, e, tables, |m, b, g| nll_batch(m, b, cfg.l2, freeze, Some(g)))
        },
        |m| nll_batch(m, valid, 0.0, freeze, None),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bpr,
    Mse,
    GaussianNll,
}

/// Mean training loss over one user's training interactions (implicit target
/// 1 for the squared-error and likelihood kinds). BPR negatives come from a
/// generator seeded by `eval_seed` alone, so users with identical histories
/// and embeddings get identical values.
pub fn user_mean_loss(model: &MfModel, split: &IndexedSplit, user: usize, kind: LossKind, eval_seed: u64) -> Result<f64> {
    let items = split
        .train
        .get(user)
        .filter(|h| !h.is_empty())
        .ok_or_else(|| LiduError::UnknownUser(format!("{user} (no training interactions)")))?;
    let n = items.len() as f64;
    let total: f64 = match kind {
        LossKind::Bpr => {
            let mut rng = rng_from(eval_seed, &[]);
            let mut sum = 0.0;
            for &pos in items {
                let neg = sample_negative(split, user, &mut rng).unwrap_or(pos);
                sum += neg_log_sigmoid(model.score(user, pos)? - model.score(user, neg)?);
            }
            sum
        }
        LossKind::Mse => items
            .iter()
            .map(|&i| model.score(user, i).map(|s| (s - 1.0).powi(2)))
            .sum::<Result<f64>>()?,
        LossKind::GaussianNll => {
            let mut sum = 0.0;
            for &i in items {
                let lv = model.log_variance(user, i)?.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
                let r = model.score(user, i)? - 1.0;
                sum += 0.5 * r * r * (-lv).exp() + 0.5 * ((2.0 * std::f64::consts::PI).ln() + lv);
            }
            sum
        }
    };
    Ok(total / n)
}
