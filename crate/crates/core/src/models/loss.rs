//! Batch losses and their analytic gradients.
//!
//! Every loss is a mean over the batch. When `grads` is given, gradients are
//! accumulated into it (callers clear it between steps).

use std::f64::consts::PI;

use super::{dot, Matrix, MfModel, LOG_VAR_MAX, LOG_VAR_MIN};

/// Regression target for one (user, item) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub user: usize,
    pub item: usize,
    pub target: f64,
}

impl Triple {
    pub fn new(user: usize, item: usize, target: f64) -> Self {
        Self { user, item, target }
    }
}

/// One BPR comparison: `pos` should outscore `neg` for `user`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Gradient buffers shaped like a model's tables.
#[derive(Debug, Clone)]
pub struct Grads {
    pub user: Matrix,
    pub item: Matrix,
    pub var_user: Option<Matrix>,
    pub var_item: Option<Matrix>,
}

impl Grads {
    pub fn zeros_like(model: &MfModel) -> Self {
        let shape = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            user: shape(&model.user_emb),
            item: shape(&model.item_emb),
            var_user: model.variance.as_ref().map(|v| shape(&v.user_emb)),
            var_item: model.variance.as_ref().map(|v| shape(&v.item_emb)),
        }
    }

    pub fn clear(&mut self) {
        self.user.fill(0.0);
        self.item.fill(0.0);
        if let Some(m) = self.var_user.as_mut() {
            m.fill(0.0);
        }
        if let Some(m) = self.var_item.as_mut() {
            m.fill(0.0);
        }
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    dot(x, x)
}

/// −log σ(x), stable for large |x|.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean squared error plus an L2 penalty on the touched rows.
pub fn mse_batch(model: &MfModel, batch: &[Triple], l2: f64, mut grads: Option<&mut Grads>) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for t in batch {
        let u = model.user_emb.row(t.user);
        let v = model.item_emb.row(t.item);
        let resid = dot(u, v) - t.target;
        loss += resid * resid + l2 * (sq_norm(u) + sq_norm(v));
        if let Some(g) = grads.as_deref_mut() {
            let c = 2.0 * resid * scale;
            axpy(c, v, g.user.row_mut(t.user));
            axpy(2.0 * l2 * scale, u, g.user.row_mut(t.user));
            axpy(c, u, g.item.row_mut(t.item));
            axpy(2.0 * l2 * scale, v, g.item.row_mut(t.item));
        }
    }
    loss * scale
}

/// Mean BPR loss −log σ(uᵀ(v⁺ − v⁻)) plus an L2 penalty on the touched rows.
pub fn bpr_batch(model: &MfModel, batch: &[BprTriple], l2: f64, mut grads: Option<&mut Grads>) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let scale = 1.0 / batch.len() as f64;
    let d = model.dim;
    let mut diff = vec![0.0; d];
    let mut loss = 0.0;
    for t in batch {
        let u = model.user_emb.row(t.user);
        let vp = model.item_emb.row(t.pos);
        let vn = model.item_emb.row(t.neg);
        for k in 0..d {
            diff[k] = vp[k] - vn[k];
        }
        let x = dot(u, &diff);
        loss += neg_log_sigmoid(x) + l2 * (sq_norm(u) + sq_norm(vp) + sq_norm(vn));
        if let Some(g) = grads.as_deref_mut() {
            let c = -sigmoid(-x) * scale;
            let r = 2.0 * l2 * scale;
            axpy(c, &diff, g.user.row_mut(t.user));
            axpy(r, u, g.user.row_mut(t.user));
            axpy(c, u, g.item.row_mut(t.pos));
            axpy(r, vp, g.item.row_mut(t.pos));
            axpy(-c, u, g.item.row_mut(t.neg));
            axpy(r, vn, g.item.row_mut(t.neg));
        }
    }
    loss * scale
}

/// Gaussian negative log-likelihood (ŷ − z)²/(2σ²) + ½ log(2πσ²) with
/// log σ² from the variance tower, clamped to [`LOG_VAR_MIN`], [`LOG_VAR_MAX`].
///
/// With `freeze_mean`, no gradient flows to the mean tower. Panics if the
/// model has no variance tower.
pub fn nll_batch(
    model: &MfModel,
    batch: &[Triple],
    l2: f64,
    freeze_mean: bool,
    mut grads: Option<&mut Grads>,
) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let tower = model.variance.as_ref().expect("nll requires a variance tower");
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for t in batch {
        let u = model.user_emb.row(t.user);
        let v = model.item_emb.row(t.item);
        let vu = tower.user_emb.row(t.user);
        let vv = tower.item_emb.row(t.item);
        let raw = dot(vu, vv);
        let log_var = raw.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
        let inv_var = (-log_var).exp();
        let resid = dot(u, v) - t.target;
        loss += 0.5 * resid * resid * inv_var + 0.5 * ((2.0 * PI).ln() + log_var);
        loss += l2 * (sq_norm(vu) + sq_norm(vv));
        if !freeze_mean {
            loss += l2 * (sq_norm(u) + sq_norm(v));
        }
        if let Some(g) = grads.as_deref_mut() {
            let r = 2.0 * l2 * scale;
            if !freeze_mean {
                let c = resid * inv_var * scale;
                axpy(c, v, g.user.row_mut(t.user));
                axpy(r, u, g.user.row_mut(t.user));
                axpy(c, u, g.item.row_mut(t.item));
                axpy(r, v, g.item.row_mut(t.item));
            }
            let gu = g.var_user.as_mut().expect("gradient buffer lacks variance tower");
            if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) {
                let c = (0.5 - 0.5 * resid * resid * inv_var) * scale;
                axpy(c, vv, gu.row_mut(t.user));
                let gi = g.var_item.as_mut().expect("gradient buffer lacks variance tower");
                axpy(c, vu, gi.row_mut(t.item));
            }
            axpy(r, vu, g.var_user.as_mut().unwrap().row_mut(t.user));
            axpy(r, vv, g.var_item.as_mut().unwrap().row_mut(t.item));
        }
    }
    loss * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{IdMap, ModelShape};
    use crate::rng::rng_from;
    use rand::Rng;

    fn model(nu: usize, ni: usize, d: usize, seed: u64) -> MfModel {
        let shape = ModelShape { users: IdMap::sequential(nu), items: IdMap::sequential(ni), dim: d };
        MfModel::random(&shape, 0.5, seed).with_variance_tower(0.5, seed + 1)
    }

    fn param_mut(p: &mut MfModel, table: usize, i: usize) -> &mut f64 {
        match table {
            0 => &mut p.user_emb.as_mut_slice()[i],
            1 => &mut p.item_emb.as_mut_slice()[i],
            2 => &mut p.variance.as_mut().unwrap().user_emb.as_mut_slice()[i],
            _ => &mut p.variance.as_mut().unwrap().item_emb.as_mut_slice()[i],
        }
    }

    /// Central differences over every parameter of the model.
    fn numeric_grads(m: &MfModel, f: &dyn Fn(&MfModel) -> f64, h: f64) -> Vec<f64> {
        let tower = m.variance.as_ref().unwrap();
        let lens = [
            m.user_emb.as_slice().len(),
            m.item_emb.as_slice().len(),
            tower.user_emb.as_slice().len(),
            tower.item_emb.as_slice().len(),
        ];
        let mut out = Vec::new();
        let mut probe = m.clone();
        for (table, &len) in lens.iter().enumerate() {
            for i in 0..len {
                let orig = *param_mut(&mut probe, table, i);
                *param_mut(&mut probe, table, i) = orig + h;
                let up = f(&probe);
                *param_mut(&mut probe, table, i) = orig - h;
                let down = f(&probe);
                *param_mut(&mut probe, table, i) = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
        out
    }

    fn flatten(g: &Grads) -> Vec<f64> {
        let mut v = g.user.as_slice().to_vec();
        v.extend_from_slice(g.item.as_slice());
        v.extend_from_slice(g.var_user.as_ref().unwrap().as_slice());
        v.extend_from_slice(g.var_item.as_ref().unwrap().as_slice());
        v
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel <= 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from(42, &[]);
        for case in 0..10u64 {
            let m = model(3, 4, 3, case);
            let triples: Vec<_> = (0..6)
                .map(|_| Triple::new(rng.random_range(0..3), rng.random_range(0..4), rng.random_range(-1.0..1.0)))
                .collect();
            let bpr: Vec<_> = (0..6)
                .map(|_| BprTriple { user: rng.random_range(0..3), pos: rng.random_range(0..4), neg: rng.random_range(0..4) })
                .collect();

            let mut g = Grads::zeros_like(&m);
            mse_batch(&m, &triples, 0.01, Some(&mut g));
            assert_close(&flatten(&g), &numeric_grads(&m, &|p| mse_batch(p, &triples, 0.01, None), 1e-5));

            g.clear();
            bpr_batch(&m, &bpr, 0.01, Some(&mut g));
            assert_close(&flatten(&g), &numeric_grads(&m, &|p| bpr_batch(p, &bpr, 0.01, None), 1e-5));

            for freeze in [false, true] {
                g.clear();
                nll_batch(&m, &triples, 0.01, freeze, Some(&mut g));
                let num = numeric_grads(&m, &|p| {
                    // a frozen mean tower has no gradient: compare against a
                    // loss that sees the original mean tower
                    if freeze {
                        let mut q = p.clone();
                        q.user_emb = m.user_emb.clone();
                        q.item_emb = m.item_emb.clone();
                        nll_batch(&q, &triples, 0.01, true, None)
                    } else {
                        nll_batch(p, &triples, 0.01, false, None)
                    }
                }, 1e-5);
                assert_close(&flatten(&g), &num);
            }
        }
    }

    #[test]
    fn zero_model_bpr_loss_is_log_two() {
        let mut m = model(2, 3, 4, 0);
        m.user_emb.fill(0.0);
        m.item_emb.fill(0.0);
        let batch = [BprTriple { user: 0, pos: 1, neg: 2 }, BprTriple { user: 1, pos: 0, neg: 1 }];
        assert!((bpr_batch(&m, &batch, 0.0, None) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn stable_log_sigmoid() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(neg_log_sigmoid(800.0) >= 0.0);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
    }
}
