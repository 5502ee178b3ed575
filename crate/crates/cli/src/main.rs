//! `lidu` command-line driver.
//!
//! Every subcommand computes its results in memory first and only then
//! creates the output directory, so a failed run leaves nothing behind.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use lidu::analysis::write_group_csv;
use lidu::data::{read_split, write_split, IndexedSplit, RawLogSpec};
use lidu::eval::{summarize, DeltaMode, EstimatorReport, MetricSummary, ReportRow};
use lidu::fixture::{generate_fixture, write_log, FixtureSpec};
use lidu::models::{checkpoint, MfModel, TrainReport};
use lidu::pipeline::{ingest, score_users, train_models, Models, PipelineConfig, RunSummary, UserTable};
use lidu::synthetic::{run_density_sweep, run_synthetic_experiment, SamplingScheme, SyntheticSpec};
use lidu::types::{DatasetSplit, PositionBias};

use crate::config::{resolve, Layered};

/// (N, L) grid used by `--sweep-n-l` when no explicit grid is given.
const DEFAULT_SWEEP_N: [usize; 4] = [1, 10, 50, 100];
const DEFAULT_SWEEP_L: [usize; 5] = [10, 50, 100, 500, 1000];

#[derive(Parser)]
#[command(name = "lidu", version, about = "List-wise ranking uncertainty and label-free performance estimation")]
struct Cli {
    /// Base seed; defaults to $LIDU_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file overriding default parameters (flags override it in turn).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic matrix-factorization experiment.
    Synth(SynthArgs),
    /// Load, filter and split an interaction log.
    Ingest(IngestArgs),
    /// Train the BPR ensemble and variance head and save checkpoints.
    Train(TrainArgs),
    /// Full evaluation: train (or load) models, score users, compare estimators.
    Run(RunArgs),
    /// Recompute metrics from a per-user estimates CSV.
    Report(ReportArgs),
    /// Write a generated interaction log with planted preference structure.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Fraction of the n×n cells used for training (at most 0.04).
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of seeds, counted up from the base seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long)]
    dropout_p: Option<f64>,
    #[arg(long, value_enum)]
    sampling: Option<Sampling>,
    /// Run once per listed density instead of once at --density.
    #[arg(long, value_delimiter = ',')]
    sweep_density: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Sampling {
    Joint,
    Sequential,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Raw interaction log (CSV or TSV with a header line).
    #[arg(long, conflicts_with = "split")]
    input: Option<PathBuf>,
    /// Split file written by `lidu ingest`.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "user")]
    user_col: String,
    #[arg(long, default_value = "item")]
    item_col: String,
    #[arg(long, default_value = "timestamp")]
    time_col: String,
    #[arg(long)]
    rating_col: Option<String>,
    /// Keep interactions rated at least this much.
    #[arg(long, requires = "rating_col")]
    rating_threshold: Option<f64>,
    #[arg(long, default_value_t = 5)]
    k_core: usize,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Directory of checkpoints from `lidu train`; trains afresh when absent.
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    n_top: Option<usize>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long)]
    dropout_p: Option<f64>,
    #[arg(long, value_enum)]
    position_bias: Option<Bias>,
    #[arg(long)]
    ndcg_k: Option<usize>,
    #[arg(long)]
    delta_frac: Option<f64>,
    /// Also report metrics separately for active and inactive users.
    #[arg(long)]
    activeness_split: bool,
    #[arg(long)]
    activeness_threshold: Option<usize>,
    /// Evaluate MC-dropout LiDu over an (N, L) grid.
    #[arg(long)]
    sweep_n_l: bool,
    #[arg(long, value_delimiter = ',', requires = "sweep_n_l")]
    sweep_n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', requires = "sweep_n_l")]
    sweep_l: Option<Vec<usize>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Bias {
    Discount,
    Literal,
}

#[derive(Args)]
struct ReportArgs {
    /// Long-format estimates CSV (user_id, estimator_name, estimate, ndcg).
    #[arg(long)]
    estimates: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    delta_frac: f64,
    #[arg(long, value_enum, default_value = "rank")]
    delta_mode: Mode,
    /// Write the metric table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    Rank,
    Raw,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let layers = Layered::new(cli.seed, cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&layers, a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(&layers, a),
        Command::Run(a) => cmd_run(&layers, a),
        Command::Report(a) => cmd_report(a),
        Command::Fixture(a) => cmd_fixture(&layers, a),
    }
}

/// Files staged in memory and written together at the end of a command.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, rel: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((rel.into(), bytes));
    }

    fn add_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> lidu::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(rel, buf);
        Ok(())
    }

    fn add_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.add(rel, buf);
        Ok(())
    }

    fn commit(self, root: &Path) -> Result<()> {
        for (rel, bytes) in self.files {
            let path = root.join(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        info!("wrote {}", root.display());
        Ok(())
    }
}

fn cmd_synth(layers: &Layered, a: &SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = resolve(layers, |seed, s: &mut SyntheticSpec| {
        let len = s.seeds.len() as u64;
        s.seeds = (seed..seed + len).collect();
    })?;
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.d {
        spec.d = v;
    }
    if let Some(v) = a.density {
        spec.density = v;
    }
    if let Some(v) = a.alpha {
        spec.alpha = v;
    }
    if let Some(v) = a.passes {
        spec.passes = v;
    }
    if let Some(v) = a.dropout_p {
        spec.dropout_p = v;
    }
    if let Some(v) = a.sampling {
        spec.sampling = match v {
            Sampling::Joint => SamplingScheme::Joint,
            Sampling::Sequential => SamplingScheme::Sequential,
        };
    }
    if layers.seed_flag.is_some() || a.seeds.is_some() {
        let base = layers.seed_flag.or(spec.seeds.first().copied()).unwrap_or(0);
        let count = a.seeds.unwrap_or(spec.seeds.len()) as u64;
        spec.seeds = (base..base + count).collect();
    }
    spec.validate()?;
    let table = match &a.sweep_density {
        Some(grid) => {
            for &d in grid {
                SyntheticSpec { density: d, ..spec.clone() }.validate()?;
            }
            run_density_sweep(&spec, grid)?
        }
        None => run_synthetic_experiment(&spec)?,
    };

    let mut out = Outputs::default();
    out.add_with("reports/synthetic.csv", |b| table.write_csv(b))?;
    let estimators: Vec<String> = {
        let mut v: Vec<String> = table.rows.iter().map(|r| r.estimator.clone()).collect();
        v.sort();
        v.dedup();
        v
    };
    let densities = a.sweep_density.clone().unwrap_or_else(|| vec![spec.density]);
    let means: Vec<_> = densities
        .iter()
        .flat_map(|&d| {
            let table = &table;
            estimators.iter().map(move |e| {
                json!({ "density": d, "estimator": e, "mean_pearson_r": table.mean_r(e, spec.n, d) })
            })
        })
        .collect();
    out.add_json("meta.json", &json!({ "command": "synth", "config": spec, "densities": densities, "summary": means }))?;
    out.commit(&a.out)
}

fn raw_spec(d: &DataArgs, input: &Path) -> RawLogSpec {
    RawLogSpec {
        path: input.to_path_buf(),
        user_col: d.user_col.clone(),
        item_col: d.item_col.clone(),
        time_col: d.time_col.clone(),
        rating_col: d.rating_col.clone(),
        rating_threshold: d.rating_threshold,
        k_core: d.k_core,
        delimiter: None,
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input {} does not exist or is not a file", path.display());
    }
    Ok(())
}

fn load_split(d: &DataArgs) -> Result<DatasetSplit> {
    match (&d.input, &d.split) {
        (Some(input), None) => {
            require_file(input)?;
            Ok(ingest(&raw_spec(d, input)).with_context(|| format!("ingesting {}", input.display()))?)
        }
        (None, Some(split)) => {
            require_file(split)?;
            Ok(read_split(split).with_context(|| format!("reading {}", split.display()))?)
        }
        _ => bail!("exactly one of --input or --split is required"),
    }
}

fn data_meta(d: &DataArgs) -> serde_json::Value {
    json!({
        "input": d.input, "split": d.split, "user_col": d.user_col, "item_col": d.item_col,
        "time_col": d.time_col, "rating_col": d.rating_col, "rating_threshold": d.rating_threshold,
        "k_core": d.k_core,
    })
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let split = load_split(&a.data)?;
    let mut out = Outputs::default();
    out.add_with("split.csv", |b| write_split(&split, b))?;
    let meta = json!({
        "command": "ingest",
        "data": data_meta(&a.data),
        "users": split.test.len(),
        "interactions": { "train": split.train.len(), "valid": split.valid.len(), "test": split.test.len() },
    });
    out.add_json("meta.json", &meta)?;
    out.commit(&a.out)
}

fn apply_model_args(cfg: &mut PipelineConfig, m: &ModelArgs, seed_flag: Option<u64>) {
    if let Some(s) = seed_flag {
        cfg.seed = s;
    }
    if let Some(v) = m.dim {
        cfg.dim = v;
    }
    if let Some(v) = m.ensemble_size {
        cfg.ensemble_size = v;
    }
    if let Some(v) = m.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = m.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = m.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = m.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = m.l2 {
        cfg.train.l2 = v;
    }
}

fn pipeline_config(layers: &Layered) -> Result<PipelineConfig> {
    resolve(layers, |seed, c: &mut PipelineConfig| c.seed = seed)
}

fn stage_models(out: &mut Outputs, models: &Models) -> Result<()> {
    for (k, m) in models.ensemble.iter().enumerate() {
        out.add_with(&format!("models/ensemble_{k}.ckpt"), |b| checkpoint::to_writer(m, b))?;
    }
    out.add_with("models/vb.ckpt", |b| checkpoint::to_writer(&models.vb, b))
}

fn cmd_train(layers: &Layered, a: &TrainArgs) -> Result<()> {
    let mut cfg = pipeline_config(layers)?;
    apply_model_args(&mut cfg, &a.model, layers.seed_flag);
    cfg.validate()?;
    let split = IndexedSplit::from_split(&load_split(&a.data)?)?;
    let models = train_models(&split, &cfg)?;
    let mut out = Outputs::default();
    stage_models(&mut out, &models)?;
    let meta = json!({
        "command": "train",
        "data": data_meta(&a.data),
        "config": cfg,
        "users": split.n_users(),
        "items": split.n_items(),
        "training": models.reports,
    });
    out.add_json("meta.json", &meta)?;
    out.commit(&a.out)
}

fn load_models(dir: &Path, split: &IndexedSplit, cfg: &PipelineConfig) -> Result<Models> {
    let load = |name: &str| -> Result<MfModel> {
        let path = dir.join(name);
        let m = checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
        if m.users != split.users || m.items != split.items {
            bail!("{} was trained on a different user/item set", path.display());
        }
        Ok(m)
    };
    let ensemble = (0..cfg.ensemble_size)
        .map(|k| load(&format!("ensemble_{k}.ckpt")))
        .collect::<Result<Vec<_>>>()?;
    let vb = load("vb.ckpt")?;
    if vb.variance.is_none() {
        bail!("vb.ckpt has no variance tower");
    }
    Ok(Models { ensemble, vb, reports: Vec::<TrainReport>::new() })
}

fn cmd_run(layers: &Layered, a: &RunArgs) -> Result<()> {
    let mut cfg = pipeline_config(layers)?;
    apply_model_args(&mut cfg, &a.model, layers.seed_flag);
    if let Some(v) = a.n_top {
        cfg.n_top = v;
    }
    if let Some(v) = a.l_max {
        cfg.l_max = v;
    }
    if let Some(v) = a.passes {
        cfg.passes = v;
    }
    if let Some(v) = a.dropout_p {
        cfg.dropout_p = v;
    }
    if let Some(v) = a.position_bias {
        cfg.position_bias = match v {
            Bias::Discount => PositionBias::Discount,
            Bias::Literal => PositionBias::Literal,
        };
    }
    if let Some(v) = a.ndcg_k {
        cfg.ndcg_k = v;
    }
    if let Some(v) = a.delta_frac {
        cfg.delta_frac = v;
    }
    if let Some(v) = a.activeness_threshold {
        cfg.activeness_threshold = v;
    }
    if a.sweep_n_l {
        cfg.sweep_n = a.sweep_n.clone().unwrap_or_else(|| DEFAULT_SWEEP_N.to_vec());
        cfg.sweep_l = a.sweep_l.clone().unwrap_or_else(|| DEFAULT_SWEEP_L.to_vec());
    }
    cfg.validate()?;
    if let Some(dir) = &a.models {
        if !dir.is_dir() {
            bail!("model directory {} does not exist", dir.display());
        }
    }

    let split = IndexedSplit::from_split(&load_split(&a.data)?)?;
    let models = match &a.models {
        Some(dir) => load_models(dir, &split, &cfg)?,
        None => train_models(&split, &cfg)?,
    };
    let table = score_users(&split, &models, &cfg)?;
    let summary = table.summary(&cfg)?;

    let mut out = Outputs::default();
    out.add_with("reports/estimates.csv", |b| table.write_estimates_csv(b))?;
    out.add("reports/summary.csv", metrics_csv(&[("all", &summary.estimators)])?);
    if a.activeness_split {
        out.add("reports/activeness.csv", metrics_csv(&[("active", &summary.active), ("inactive", &summary.inactive)])?);
    }
    if !summary.sweep.is_empty() {
        out.add("reports/sweep.csv", sweep_csv(&summary)?);
    }
    stage_groups(&mut out, &table, &cfg)?;
    if a.models.is_none() {
        stage_models(&mut out, &models)?;
    }
    let meta = json!({
        "command": "run",
        "data": data_meta(&a.data),
        "models": a.models,
        "activeness_split": a.activeness_split,
        "summary": summary,
        "training": models.reports,
    });
    out.add_json("meta.json", &meta)?;
    for (name, m) in &summary.estimators {
        info!("{name:14} win rate {:.3}  r {}", m.win_rate, fmt_opt(m.pearson_r));
    }
    out.commit(&a.out)
}

fn stage_groups(out: &mut Outputs, table: &UserTable, cfg: &PipelineConfig) -> Result<()> {
    match table.dynamism_groups(cfg) {
        Ok(g) => out.add_with("reports/dynamism_groups.csv", |b| write_group_csv(&g, b))?,
        Err(e) => warn!("skipping interest-dynamism groups: {e}"),
    }
    match table.diversity_groups(cfg) {
        Ok(g) => out.add_with("reports/diversity_groups.csv", |b| write_group_csv(&g, b))?,
        Err(e) => warn!("skipping list-diversity groups: {e}"),
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.3}"))
}

fn metrics_csv(groups: &[(&str, &std::collections::BTreeMap<String, MetricSummary>)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "estimator_name", "win_rate", "pearson_r", "sare", "n_users"])?;
    for (group, map) in groups {
        for (name, m) in map.iter() {
            w.write_record([
                group.to_string(),
                name.clone(),
                m.win_rate.to_string(),
                m.pearson_r.map(|r| r.to_string()).unwrap_or_default(),
                m.sare.to_string(),
                m.n_users.to_string(),
            ])?;
        }
    }
    Ok(w.into_inner()?)
}

fn sweep_csv(summary: &RunSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &summary.sweep {
        w.serialize(p)?;
    }
    Ok(w.into_inner()?)
}

fn read_estimates(path: &Path) -> Result<Vec<(String, EstimatorReport)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<ReportRow>> = Default::default();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 4 {
            bail!("{}: expected 4 fields per line", path.display());
        }
        let parse = |i: usize| -> Result<f64> {
            rec[i].parse().with_context(|| format!("{}: bad number `{}`", path.display(), &rec[i]))
        };
        let name = rec[1].to_string();
        if !rows.contains_key(&name) {
            order.push(name.clone());
        }
        rows.entry(name).or_default().push(ReportRow { user: rec[0].to_string(), estimate: parse(2)?, ndcg: parse(3)? });
    }
    order
        .into_iter()
        .map(|name| {
            let report = EstimatorReport::new(rows.remove(&name).unwrap_or_default())?;
            Ok((name, report))
        })
        .collect()
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    require_file(&a.estimates)?;
    let mode = match a.delta_mode {
        Mode::Rank => DeltaMode::Rank,
        Mode::Raw => DeltaMode::Raw,
    };
    let metrics: std::collections::BTreeMap<String, MetricSummary> = read_estimates(&a.estimates)?
        .into_iter()
        .map(|(name, report)| (name, summarize(&report, a.delta_frac, mode)))
        .collect();
    let bytes = metrics_csv(&[("all", &metrics)])?;
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, bytes)?;
        }
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn cmd_fixture(layers: &Layered, a: &FixtureArgs) -> Result<()> {
    let mut spec: FixtureSpec = resolve(layers, |seed, s: &mut FixtureSpec| s.seed = seed)?;
    if let Some(s) = layers.seed_flag {
        spec.seed = s;
    }
    if let Some(v) = a.n_users {
        spec.n_users = v;
    }
    if let Some(v) = a.n_items {
        spec.n_items = v;
    }
    let data = generate_fixture(&spec)?;
    let mut buf = Vec::new();
    write_log(&data, &mut buf)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, buf).with_context(|| format!("writing {}", a.out.display()))?;
    info!("wrote {} interactions to {}", data.len(), a.out.display());
    Ok(())
}
