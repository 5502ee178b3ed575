use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use tempfile::TempDir;

use lidu::data::{k_core, leave_one_out, read_split, write_split, IndexedSplit, RawLogSpec};
use lidu::fixture::{generate_fixture, write_log, FixtureSpec};
use lidu::models::checkpoint;
use lidu::models::TrainConfig;
use lidu::pipeline::{ingest, score_users, train_models, Models, PipelineConfig};
use lidu::{lidu_full, lidu_topn, Interaction, LiduConfig, RankedPrediction, ScoreDistribution};

#[test]
fn rated_tsv_log_is_filtered_cored_and_split() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("ratings.tsv");
    let mut text = String::from("uid\tiid\tts\tstars\n");
    // u0..u3 rate items 0..4 highly; every user also has one low rating on i9
    for u in 0..4 {
        for i in 0..5 {
            text.push_str(&format!("u{u}\ti{i}\t{}\t5\n", 10 * i + u));
        }
        text.push_str(&format!("u{u}\ti9\t99\t1\n"));
    }
    text.push_str("loner\ti0\t1\t5\n");
    fs::write(&path, text).unwrap();
    let spec = RawLogSpec {
        user_col: "uid".into(),
        item_col: "iid".into(),
        time_col: "ts".into(),
        rating_col: Some("stars".into()),
        rating_threshold: Some(4.0),
        k_core: 3,
        ..RawLogSpec::new(&path)
    };
    let split = ingest(&spec).unwrap();
    assert_eq!(split.test.len(), 4);
    assert!(split.test.iter().all(|x| x.item == "i4"));
    assert!(split.valid.iter().all(|x| x.item == "i3"));
    assert!(split.train.iter().all(|x| x.item != "i9" && x.user != "loner"));

    let out = dir.path().join("split.csv");
    write_split(&split, fs::File::create(&out).unwrap()).unwrap();
    // split files are implicit: ratings are not kept
    let mut implicit = split.clone();
    for x in implicit.train.iter_mut().chain(&mut implicit.valid).chain(&mut implicit.test) {
        x.rating = None;
    }
    assert_eq!(read_split(&out).unwrap(), implicit);
}

#[test]
fn missing_log_is_an_error() {
    let dir = TempDir::new().unwrap();
    assert!(ingest(&RawLogSpec::new(dir.path().join("absent.csv"))).is_err());
}

#[test]
fn checkpoints_reproduce_the_scores() {
    let fixture = FixtureSpec { n_users: 120, n_items: 80, min_len: 6, mean_extra_len: 5.0, ..Default::default() };
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.csv");
    write_log(&generate_fixture(&fixture).unwrap(), fs::File::create(&log).unwrap()).unwrap();
    let split = IndexedSplit::from_split(&ingest(&RawLogSpec { k_core: 5, ..RawLogSpec::new(&log) }).unwrap()).unwrap();
    let cfg = PipelineConfig {
        dim: 8,
        ensemble_size: 2,
        n_top: 10,
        l_max: 40,
        passes: 8,
        train: TrainConfig { max_epochs: 6, batch_size: 128, ..Default::default() },
        ..Default::default()
    };
    let models = train_models(&split, &cfg).unwrap();
    let direct = score_users(&split, &models, &cfg).unwrap();

    let mut saved = Vec::new();
    for (k, m) in models.ensemble.iter().chain([&models.vb]).enumerate() {
        let p = dir.path().join(format!("m{k}.ckpt"));
        checkpoint::save(m, &p).unwrap();
        saved.push(checkpoint::load(&p).unwrap());
    }
    let vb = saved.pop().unwrap();
    let reloaded = Models { ensemble: saved, vb, reports: Vec::new() };
    assert_eq!(score_users(&split, &reloaded, &cfg).unwrap(), direct);
}

/// Largest node set whose induced subgraph has every degree ≥ k, by
/// exhaustive search.
fn brute_force_core(edges: &BTreeSet<(usize, usize)>, n_users: usize, n_items: usize, k: usize) -> BTreeSet<(usize, usize)> {
    let nodes = n_users + n_items;
    let mut best: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut best_size = 0;
    for mask in 0u32..(1 << nodes) {
        let has = |n: usize| mask & (1 << n) != 0;
        let inside: BTreeSet<(usize, usize)> =
            edges.iter().copied().filter(|&(u, i)| has(u) && has(n_users + i)).collect();
        let ok = (0..nodes).filter(|&n| has(n)).all(|n| {
            let deg = if n < n_users {
                inside.iter().filter(|e| e.0 == n).count()
            } else {
                inside.iter().filter(|e| e.1 == n - n_users).count()
            };
            deg >= k
        });
        if ok && mask.count_ones() > best_size {
            best_size = mask.count_ones();
            best = inside;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn k_core_matches_exhaustive_search(
        n_users in 1usize..=6,
        n_items in 1usize..=6,
        bits in prop::collection::vec(any::<bool>(), 36),
        k in 1usize..=3,
    ) {
        let edges: BTreeSet<(usize, usize)> = (0..n_users)
            .flat_map(|u| (0..n_items).map(move |i| (u, i)))
            .filter(|&(u, i)| bits[u * 6 + i])
            .collect();
        let data: Vec<Interaction> = edges
            .iter()
            .enumerate()
            .map(|(t, &(u, i))| Interaction::new(format!("u{u}"), format!("i{i}"), t as i64, None))
            .collect();
        let kept: BTreeSet<(usize, usize)> = k_core(data, k)
            .iter()
            .map(|x| (x.user[1..].parse().unwrap(), x.item[1..].parse().unwrap()))
            .collect();
        prop_assert_eq!(kept, brute_force_core(&edges, n_users, n_items, k));
    }

    #[test]
    fn lidu_ignores_shift_and_common_scale(
        raw in prop::collection::vec((-3.0f64..3.0, 0.01f64..2.0), 2..12),
        shift in -10.0f64..10.0,
        scale in 0.1f64..10.0,
    ) {
        // π depends on (μa − μb)/√(σa² + σb²) only
        let build = |f: &dyn Fn(f64, f64) -> (f64, f64)| {
            RankedPrediction::new(0, raw.iter().enumerate().map(|(i, &(m, v))| {
                let (m, v) = f(m, v);
                (i, ScoreDistribution::new(m, v).unwrap())
            })).unwrap()
        };
        let base = build(&|m, v| (m, v));
        let moved = build(&|m, v| (scale * m + shift, scale * scale * v));
        let len = raw.len();
        let a = lidu_full(&base, len).unwrap().value;
        let b = lidu_full(&moved, len).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let cfg = LiduConfig { n_top: len.min(3), l_max: len, ..Default::default() };
        let ta = lidu_topn(&base, &cfg).unwrap().value;
        prop_assert!((ta - lidu_topn(&moved, &cfg).unwrap().value).abs() <= 1e-9 * ta.abs().max(1.0));
        prop_assert!(a >= 0.0 && ta >= 0.0);
    }

    #[test]
    fn more_variance_never_lowers_lidu(
        raw in prop::collection::vec((-3.0f64..3.0, 0.01f64..2.0), 2..10),
        factor in 1.0f64..5.0,
    ) {
        // every pair probability is Φ of a nonnegative gap, which shrinks
        // towards ½ as variances grow
        let pred = |k: f64| RankedPrediction::new(
            0,
            raw.iter().enumerate().map(|(i, &(m, v))| (i, ScoreDistribution::new(m, k * v).unwrap())),
        ).unwrap();
        let len = raw.len();
        let low = lidu_full(&pred(1.0), len).unwrap().value;
        let high = lidu_full(&pred(factor), len).unwrap().value;
        prop_assert!(high >= low - 1e-12);
    }
}

#[test]
fn leave_one_out_holds_out_latest_interactions() {
    let data = k_core(generate_fixture(&FixtureSpec { n_users: 40, n_items: 30, ..Default::default() }).unwrap(), 2);
    let split = leave_one_out(&data);
    for t in &split.test {
        let latest = data.iter().filter(|x| x.user == t.user).map(|x| x.timestamp).max().unwrap();
        assert_eq!(t.timestamp, latest);
    }
    assert_eq!(split.train.len() + split.valid.len() + split.test.len(), data.len());
}
