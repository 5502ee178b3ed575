//! List probability and list uncertainty (LiDu).
//!
//! Every item score is an independent Gaussian. The probability that item `a`
//! outranks item `b` is Φ((μa − μb) / √(σa² + σb²)); the probability of the
//! model's own ranking is the product of these pairwise terms between each
//! head position and everything below it. LiDu is the negative log of that
//! product. The top-N variant skips near neighbours with a step schedule and
//! discounts deeper head positions.

use serde::{Deserialize, Serialize};

use crate::error::{LiduError, Result};
use crate::normal::standard_normal_cdf;
use crate::types::{LiduConfig, PositionBias, RankedPrediction, ScoreDistribution};

/// Floor applied to pairwise probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiduValue {
    /// Negative log-likelihood in nats.
    pub value: f64,
    pub n_pairs_used: usize,
}

/// P(a ranks above b) for independent Gaussian scores.
pub fn pairwise_prob(a: &ScoreDistribution, b: &ScoreDistribution) -> f64 {
    let var = a.variance() + b.variance();
    let gap = a.mean() - b.mean();
    if var == 0.0 {
        return match gap.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    standard_normal_cdf(gap / var.sqrt())
}

#[inline]
fn neg_log_pair(a: &ScoreDistribution, b: &ScoreDistribution) -> f64 {
    -pairwise_prob(a, b).max(PROB_FLOOR).ln()
}

/// Log-probability that the first `k` positions come out in their current order
/// relative to everything below them.
pub fn list_log_prob(pred: &RankedPrediction, k: usize) -> Result<f64> {
    let len = pred.len();
    if k == 0 || k > len {
        return Err(LiduError::ListTooShort { k, len });
    }
    let items = pred.items();
    let mut total = 0.0;
    for n in 0..k {
        let head = &items[n].1;
        for (_, below) in &items[n + 1..] {
            total -= neg_log_pair(head, below);
        }
    }
    Ok(total)
}

/// Full-list uncertainty over the first `k` positions.
pub fn lidu_full(pred: &RankedPrediction, k: usize) -> Result<LiduValue> {
    let log_prob = list_log_prob(pred, k)?;
    let len = pred.len();
    let n_pairs_used = (0..k).map(|n| len - n - 1).sum();
    // -0.0 for empty sums
    Ok(LiduValue { value: -log_prob + 0.0, n_pairs_used })
}

/// Largest power of two not exceeding `n` (n ≥ 1).
pub fn high_bit(n: usize) -> usize {
    assert!(n >= 1, "high_bit is defined for n >= 1");
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// First (1-based) list position compared against head position `n`.
pub fn step_index(n: usize) -> usize {
    high_bit(n) + n
}

/// Position bias log2(n + 1) for 1-based head position `n`.
pub fn position_weight(n: usize) -> f64 {
    ((n + 1) as f64).log2()
}

/// Top-N uncertainty with the step schedule and position bias.
pub fn lidu_topn(pred: &RankedPrediction, cfg: &LiduConfig) -> Result<LiduValue> {
    lidu_with_schedule(pred, cfg.n_top, cfg.l_max, cfg.position_bias, step_index, position_weight)
}

/// Top-N uncertainty under an arbitrary schedule.
///
/// `step(n)` gives the first 1-based position compared against head position
/// `n`; `weight(n)` gives its position bias. [`lidu_topn`] uses
/// [`step_index`] and [`position_weight`]; with `step(n) = n + 1` and unit
/// weights the result equals [`lidu_full`] over the first `l_max` items.
pub fn lidu_with_schedule(
    pred: &RankedPrediction,
    n_top: usize,
    l_max: usize,
    bias: PositionBias,
    step: impl Fn(usize) -> usize,
    weight: impl Fn(usize) -> f64,
) -> Result<LiduValue> {
    let len = pred.len();
    if l_max == 0 || l_max > len {
        return Err(LiduError::ListTooShort { k: l_max, len });
    }
    if n_top == 0 || n_top > l_max {
        return Err(LiduError::ListTooShort { k: n_top, len: l_max });
    }
    let items = pred.items();
    let mut value = 0.0;
    let mut n_pairs_used = 0;
    for n in 1..=n_top {
        let first = step(n);
        if first > l_max {
            continue;
        }
        let head = &items[n - 1].1;
        let pairs = l_max - first + 1;
        let sum: f64 = items[first - 1..l_max]
            .iter()
            .map(|(_, below)| neg_log_pair(head, below))
            .sum();
        let p = weight(n);
        value += match bias {
            PositionBias::Discount => sum / p,
            PositionBias::Literal => sum + pairs as f64 * p.ln(),
        };
        n_pairs_used += pairs;
    }
    Ok(LiduValue { value: value + 0.0, n_pairs_used })
}

/// Sum of the head items' variances: the point-wise strawman.
pub fn pointwise_uncertainty(pred: &RankedPrediction, n_top: usize) -> Result<f64> {
    if n_top > pred.len() {
        return Err(LiduError::ListTooShort { k: n_top, len: pred.len() });
    }
    Ok(pred.items()[..n_top].iter().map(|(_, d)| d.variance()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Backend;
    use proptest::prelude::*;

    fn sd(m: f64, v: f64) -> ScoreDistribution {
        ScoreDistribution::new(m, v).unwrap()
    }

    fn ranked(dists: &[(f64, f64)]) -> RankedPrediction {
        RankedPrediction::new(0, dists.iter().enumerate().map(|(i, &(m, v))| (i, sd(m, v)))).unwrap()
    }

    fn cfg(n_top: usize, l_max: usize) -> LiduConfig {
        LiduConfig {
            n_top,
            l_max,
            backend: Backend::McDropout,
            dropout_p: 0.2,
            n_passes: 20,
            position_bias: PositionBias::Discount,
        }
    }

    const PHI_1: f64 = 0.841_344_746_068_542_9;

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_prob(&sd(1.0, 0.3), &sd(1.0, 2.0)), 0.5);
        let p = pairwise_prob(&sd(1.0 + 5f64.sqrt(), 1.0), &sd(1.0, 4.0));
        assert!((p - PHI_1).abs() < 1e-12);
        assert_eq!(pairwise_prob(&sd(2.0, 0.0), &sd(1.0, 0.0)), 1.0);
        assert_eq!(pairwise_prob(&sd(1.0, 0.0), &sd(2.0, 0.0)), 0.0);
        assert_eq!(pairwise_prob(&sd(1.0, 0.0), &sd(1.0, 0.0)), 0.5);
    }

    #[test]
    fn list_log_prob_examples() {
        assert_eq!(list_log_prob(&ranked(&[(1.0, 1.0)]), 1).unwrap(), 0.0);
        let two = ranked(&[(0.0, 1.0), (0.0, 2.0)]);
        assert!((list_log_prob(&two, 2).unwrap() - 0.5f64.ln()).abs() < 1e-15);

        let three = ranked(&[(2.0, 0.5), (1.0, 0.25), (-0.5, 1.0)]);
        let it = three.items();
        let by_hand = pairwise_prob(&it[0].1, &it[1].1).ln()
            + pairwise_prob(&it[0].1, &it[2].1).ln()
            + pairwise_prob(&it[1].1, &it[2].1).ln();
        assert!((list_log_prob(&three, 3).unwrap() - by_hand).abs() < 1e-14);
        assert!(matches!(list_log_prob(&three, 4), Err(LiduError::ListTooShort { .. })));
        assert!(list_log_prob(&three, 0).is_err());
    }

    #[test]
    fn lidu_full_examples() {
        assert_eq!(lidu_full(&ranked(&[(3.0, 1.0)]), 1).unwrap().value, 0.0);
        let v = lidu_full(&ranked(&[(0.0, 1.0), (0.0, 1.0)]), 2).unwrap();
        assert!((v.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v.n_pairs_used, 1);
    }

    #[test]
    fn zero_probability_is_clamped() {
        // two certain items whose order contradicts the list cannot arise from
        // sorting, but a huge gap with tiny variance underflows Φ's lower tail
        let v = lidu_full(&ranked(&[(0.0, 1e-12), (0.0, 1e-12)]), 2).unwrap();
        assert!(v.value.is_finite());
        let p = sd(-1e6, 1e-12);
        assert!(neg_log_pair(&p, &sd(1e6, 1e-12)) <= -PROB_FLOOR.ln() + 1e-9);
    }

    #[test]
    fn step_and_weight() {
        assert_eq!(step_index(1), 2);
        assert_eq!(step_index(3), 5);
        assert_eq!(step_index(4), 8);
        assert_eq!(high_bit(1), 1);
        assert_eq!(high_bit(1000), 512);
        assert_eq!(position_weight(1), 1.0);
        assert_eq!(position_weight(3), 2.0);
        assert_eq!(position_weight(7), 3.0);
    }

    #[test]
    fn topn_examples() {
        let flat = ranked(&[(0.5, 0.2); 4]);
        let v = lidu_topn(&flat, &cfg(1, 4)).unwrap();
        assert!((v.value - 3.0 * std::f64::consts::LN_2).abs() < 1e-14);
        assert_eq!(v.n_pairs_used, 3);

        let v = lidu_topn(&flat, &cfg(1, 1)).unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(v.n_pairs_used, 0);

        let sharp = ranked(&[(5.0, 0.0), (1.0, 0.0), (0.0, 0.0), (-1.0, 0.0)]);
        assert_eq!(lidu_topn(&sharp, &cfg(1, 4)).unwrap().value, 0.0);

        assert!(lidu_topn(&flat, &cfg(1, 5)).is_err());
    }

    #[test]
    fn topn_pair_count() {
        let list = ranked(&(0..40).map(|i| (-(i as f64), 1.0)).collect::<Vec<_>>());
        let v = lidu_topn(&list, &cfg(10, 30)).unwrap();
        let expected: usize = (1..=10).map(|n| 30usize.saturating_sub(step_index(n) - 1)).sum();
        assert_eq!(v.n_pairs_used, expected);
    }

    #[test]
    fn literal_bias_adds_constant() {
        let a = ranked(&(0..12).map(|i| (-(i as f64) * 0.3, 0.5)).collect::<Vec<_>>());
        let b = ranked(&(0..12).map(|i| (-(i as f64) * 0.9, 0.1)).collect::<Vec<_>>());
        let lit = |p: &RankedPrediction| {
            lidu_topn(p, &LiduConfig { position_bias: PositionBias::Literal, ..cfg(4, 12) }).unwrap().value
        };
        let unweighted = |p: &RankedPrediction| {
            lidu_with_schedule(p, 4, 12, PositionBias::Discount, step_index, |_| 1.0).unwrap().value
        };
        let offset_a = lit(&a) - unweighted(&a);
        let offset_b = lit(&b) - unweighted(&b);
        assert!((offset_a - offset_b).abs() < 1e-9);
        let by_hand: f64 = (1..=4).map(|n| (12 - step_index(n) + 1) as f64 * position_weight(n).ln()).sum();
        assert!((offset_a - by_hand).abs() < 1e-9);
    }

    #[test]
    fn pointwise_examples() {
        let p = ranked(&[(3.0, 0.1), (2.0, 0.2), (1.0, 0.3)]);
        assert!((pointwise_uncertainty(&p, 3).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(pointwise_uncertainty(&p, 1).unwrap(), 0.1);
        assert_eq!(pointwise_uncertainty(&ranked(&[(1.0, 0.0), (0.0, 0.0)]), 2).unwrap(), 0.0);
    }

    fn list_strategy(min: usize, max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-3.0f64..3.0, 0.01f64..2.0), min..=max)
    }

    proptest! {
        #[test]
        fn shift_invariance(list in list_strategy(8, 20), c in -50.0f64..50.0) {
            let a = ranked(&list);
            let shifted: Vec<_> = list.iter().map(|&(m, v)| (m + c, v)).collect();
            let b = ranked(&shifted);
            let fa = lidu_full(&a, a.len()).unwrap().value;
            let fb = lidu_full(&b, b.len()).unwrap().value;
            prop_assert!((fa - fb).abs() <= 1e-8 * fa.max(1.0));
            let ta = lidu_topn(&a, &cfg(3, 8)).unwrap().value;
            let tb = lidu_topn(&b, &cfg(3, 8)).unwrap().value;
            prop_assert!((ta - tb).abs() <= 1e-8 * ta.max(1.0));
        }

        #[test]
        fn separation_never_increases(list in list_strategy(8, 20), lambda in 1.0f64..5.0) {
            let a = ranked(&list);
            let stretched: Vec<_> = a.items().iter().map(|(_, d)| (d.mean() * lambda, d.variance())).collect();
            let b = ranked(&stretched);
            let ta = lidu_topn(&a, &cfg(3, 8)).unwrap().value;
            let tb = lidu_topn(&b, &cfg(3, 8)).unwrap().value;
            prop_assert!(tb <= ta + 1e-9);
        }

        #[test]
        fn variance_never_decreases(list in list_strategy(8, 20), lambda in 1.0f64..5.0) {
            let a = ranked(&list);
            let noisier: Vec<_> = a.items().iter().map(|(_, d)| (d.mean(), d.variance() * lambda)).collect();
            let b = ranked(&noisier);
            let ta = lidu_topn(&a, &cfg(3, 8)).unwrap().value;
            let tb = lidu_topn(&b, &cfg(3, 8)).unwrap().value;
            prop_assert!(tb >= ta - 1e-9);
        }

        #[test]
        fn lidu_is_nonnegative(list in list_strategy(1, 30)) {
            let a = ranked(&list);
            prop_assert!(lidu_full(&a, a.len()).unwrap().value >= 0.0);
            let l = a.len();
            let n = l.min(4);
            prop_assert!(lidu_topn(&a, &cfg(n, l)).unwrap().value >= 0.0);
        }

        #[test]
        fn adjacent_schedule_reduces_to_full(list in list_strategy(1, 10)) {
            let a = ranked(&list);
            let k = a.len();
            let full = lidu_full(&a, k).unwrap();
            let sched = lidu_with_schedule(&a, k, k, PositionBias::Discount, |n| n + 1, |_| 1.0).unwrap();
            prop_assert!((full.value - sched.value).abs() < 1e-10);
            prop_assert_eq!(full.n_pairs_used, sched.n_pairs_used);
        }
    }
}
