use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use ceg_core::ceg::{generate_many, predict_next};
use ceg_core::classical::IntensityBound;
use ceg_core::data::{load_dataset, save_dataset, split_dataset, Dataset};
use ceg_core::eval::{evaluate, write_plot_csv};
use ceg_core::nets::{CegModel, Standardization};
use ceg_core::rng::{tag, StreamKey};
use ceg_core::train::{train, write_log_csv, Method};

use crate::config::*;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// ground-truth process
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[command(flatten)]
    pub params: ModelFlags,
    /// horizon of every sequence
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub n_seqs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// constant thinning bound (required for etas); adaptive otherwise
    #[arg(long)]
    pub bound: Option<f64>,
    /// re-draws allowed per sequence after a bound violation
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg: SimulateConfig = base_config(args.config.as_deref())?;
    check_command(&cfg.command, "simulate")?;
    cfg.model = args.params.resolve(args.model, cfg.model, "--model")?;
    set(&mut cfg.horizon, args.horizon);
    set(&mut cfg.n_seqs, args.n_seqs);
    set(&mut cfg.seed, args.seed);
    set(&mut cfg.retries, args.retries);
    cfg.bound = args.bound.or(cfg.bound);
    cfg.out = args.out.or(cfg.out);
    let model = *require(&cfg.model, "--model")?;
    let out = require(&cfg.out, "--out")?.clone();
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return usage("--T must be positive");
    }
    let bound = match cfg.bound {
        Some(b) if b > 0.0 => IntensityBound::Constant(b),
        Some(_) => return usage("--bound must be positive"),
        None => IntensityBound::Adaptive,
    };
    let ds = model.simulate_dataset(cfg.n_seqs, cfg.horizon, bound, cfg.seed, cfg.retries)?;
    save_dataset(&ds, &out)?;
    write_json(&cfg, &sidecar(&out, "config.json"))?;
    eprintln!(
        "wrote {} sequences ({} events) to {}",
        ds.len(),
        ds.total_events(),
        out.display()
    );
    Ok(())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Kde,
    Cvae,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// held-out dataset; otherwise `--holdout-frac` of `--data` is split off
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub holdout_frac: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// generated samples per event
    #[arg(long = "L")]
    pub sample_count: Option<usize>,
    /// kNN neighbour count (default ceil(sqrt(L)))
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub bandwidth_scale: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub sigma_obs: Option<f64>,
    #[arg(long)]
    pub noise_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// model file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// training log CSV (default: next to the model)
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainRunConfig = base_config(args.config.as_deref())?;
    check_command(&cfg.command, "train")?;
    cfg.data = args.data.or(cfg.data);
    cfg.valid = args.valid.or(cfg.valid);
    set(&mut cfg.holdout_frac, args.holdout_frac);
    if let Some(m) = args.method {
        cfg.train.method = match m {
            MethodArg::Kde => Method::Kde,
            MethodArg::Cvae => Method::Cvae,
        };
    }
    set(&mut cfg.train.epochs, args.epochs);
    set(&mut cfg.train.lr, args.lr);
    set(&mut cfg.train.batch_size, args.batch_size);
    set(&mut cfg.train.sample_count, args.sample_count);
    cfg.train.kde.k = args.k.or(cfg.train.kde.k);
    set(&mut cfg.train.kde.bandwidth_scale, args.bandwidth_scale);
    set(&mut cfg.train.clip_norm, args.clip_norm);
    set(&mut cfg.train.sigma_obs, args.sigma_obs);
    set(&mut cfg.train.seed, args.seed);
    set(&mut cfg.arch.noise_dim, args.noise_dim);
    set(&mut cfg.arch.hidden_dim, args.hidden_dim);
    cfg.out = args.out.or(cfg.out);
    let out = require(&cfg.out, "--out")?.clone();
    cfg.log = Some(args.log.or(cfg.log).unwrap_or_else(|| sidecar(&out, "log.csv")));
    if let Err(e) = cfg.train.validate() {
        return usage(e.to_string());
    }
    if cfg.valid.is_none() && !(0.0..1.0).contains(&cfg.holdout_frac) {
        return usage("--holdout-frac must be in [0, 1)");
    }

    let data = load_dataset(require(&cfg.data, "--data")?)?;
    let (train_set, valid) = match &cfg.valid {
        Some(path) => (data, Some(load_dataset(path)?)),
        None if cfg.holdout_frac > 0.0 => {
            let (a, b) = split_dataset(&data, 1.0 - cfg.holdout_frac, cfg.train.seed)?;
            (a, Some(b))
        }
        None => (data, None),
    };
    if let Some(v) = &valid {
        check_marks(v.mark_dim, train_set.mark_dim, "validation data", "training data")?;
    }
    let arch = cfg.arch.architecture(train_set.mark_dim);
    let init_key = StreamKey::new(cfg.train.seed).derive(tag::INIT);
    let model = CegModel::init(
        arch,
        Standardization::fit(&train_set),
        cfg.train.method == Method::Cvae,
        init_key,
    )
    .map_err(|e| Usage(e.to_string()))?;
    let outcome = train(model, &train_set, valid.as_ref(), &cfg.train)?;
    outcome.model.save(&out)?;
    write_log_csv(&outcome.log, cfg.log.as_ref().expect("set above"))?;
    write_json(&cfg, &sidecar(&out, "config.json"))?;
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "trained {} epochs: train loss {:.4}{}",
            last.epoch,
            last.train_loss,
            last.valid_loss
                .map(|v| format!(", held-out {v:.4}"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn check_marks(found: usize, expected: usize, what: &str, against: &str) -> Result<()> {
    if found != expected {
        return Err(DataMismatch(format!(
            "{what} has {found} mark dimension(s) but {against} has {expected}"
        ))
        .into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// trained model file
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// test data
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// ground-truth process
    #[arg(long, value_enum)]
    pub truth: Option<ModelKind>,
    #[command(flatten)]
    pub params: ModelFlags,
    /// samples per conditional query
    #[arg(long = "L")]
    pub sample_count: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub bandwidth_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// report JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// plot-data CSV (default: next to the report)
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let mut cfg: EvaluateConfig = base_config(args.config.as_deref())?;
    check_command(&cfg.command, "evaluate")?;
    cfg.model = args.model.or(cfg.model);
    cfg.data = args.data.or(cfg.data);
    cfg.truth = args.params.resolve(args.truth, cfg.truth, "--truth")?;
    set(&mut cfg.eval.sample_count, args.sample_count);
    set(&mut cfg.eval.grid_points, args.grid_points);
    set(&mut cfg.eval.kde.bandwidth_scale, args.bandwidth_scale);
    set(&mut cfg.eval.seed, args.seed);
    cfg.out = args.out.or(cfg.out);
    let out = require(&cfg.out, "--out")?.clone();
    cfg.plot = Some(args.plot.or(cfg.plot).unwrap_or_else(|| sidecar(&out, "plot.csv")));
    let truth = *require(&cfg.truth, "--truth")?;
    if let Err(e) = cfg.eval.validate() {
        return usage(e.to_string());
    }
    let model = CegModel::load(require(&cfg.model, "--model")?)?;
    let data = load_dataset(require(&cfg.data, "--data")?)?;
    check_marks(data.mark_dim, model.arch.mark_dim, "test data", "the model")?;
    check_marks(truth.mark_dim(), model.arch.mark_dim, "the ground truth", "the model")?;
    let ev = evaluate(&model, &truth, &data, &cfg.eval)?;
    write_json(&ev.report, &out)?;
    write_plot_csv(&ev.rows, cfg.plot.as_ref().expect("set above"))?;
    write_json(&cfg, &sidecar(&out, "config.json"))?;
    eprintln!(
        "test ll/event {:.4} (truth {:.4}), mre_f {:.4}, mre_lambda {:.4}",
        ev.report.test_ll_per_event, ev.report.truth_ll_per_event, ev.report.mre_f, ev.report.mre_lambda
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub n_seqs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_events: Option<usize>,
    /// clamp generated marks, `lo:hi,lo:hi,...`
    #[arg(long, value_parser = parse_bounds)]
    pub mark_bounds: Option<Vec<(f64, f64)>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Serialize)]
struct TruncationEntry {
    sequence: usize,
    events: usize,
    truncated: bool,
}

pub fn generate_cmd(args: GenerateArgs) -> Result<()> {
    let mut cfg: GenerateConfig = base_config(args.config.as_deref())?;
    check_command(&cfg.command, "generate")?;
    cfg.model = args.model.or(cfg.model);
    set(&mut cfg.generation.horizon, args.horizon);
    set(&mut cfg.n_seqs, args.n_seqs);
    set(&mut cfg.generation.seed, args.seed);
    set(&mut cfg.generation.max_events, args.max_events);
    cfg.generation.mark_bounds = args.mark_bounds.or(cfg.generation.mark_bounds);
    cfg.out = args.out.or(cfg.out);
    let out = require(&cfg.out, "--out")?.clone();
    if let Err(e) = cfg.generation.validate() {
        return usage(e.to_string());
    }
    let model = CegModel::load(require(&cfg.model, "--model")?)?;
    if let Some(b) = &cfg.generation.mark_bounds {
        if b.len() != model.arch.mark_dim {
            return usage(format!(
                "--mark-bounds has {} interval(s), the model has {} mark dimension(s)",
                b.len(),
                model.arch.mark_dim
            ));
        }
    }
    let generated = generate_many(&model, &cfg.generation, cfg.n_seqs)?;
    let entries: Vec<TruncationEntry> = generated
        .iter()
        .enumerate()
        .map(|(i, g)| TruncationEntry {
            sequence: i,
            events: g.sequence.len(),
            truncated: g.truncated,
        })
        .collect();
    let ds = Dataset::new(generated.into_iter().map(|g| g.sequence).collect(), model.arch.mark_dim)?;
    save_dataset(&ds, &out)?;
    write_json(&entries, &sidecar(&out, "truncation.json"))?;
    write_json(&cfg, &sidecar(&out, "config.json"))?;
    let n_trunc = entries.iter().filter(|e| e.truncated).count();
    eprintln!(
        "generated {} sequences ({} events, {n_trunc} truncated) to {}",
        ds.len(),
        ds.total_events(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSONL file; one prediction per line
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long = "L")]
    pub sample_count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSONL output (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Serialize)]
struct PredictionLine {
    dt_mean: f64,
    mark_mean: Vec<f64>,
    #[serde(rename = "L")]
    l: usize,
}

pub fn predict_cmd(args: PredictArgs) -> Result<()> {
    let mut cfg: PredictConfig = base_config(args.config.as_deref())?;
    check_command(&cfg.command, "predict")?;
    cfg.model = args.model.or(cfg.model);
    cfg.history = args.history.or(cfg.history);
    set(&mut cfg.sample_count, args.sample_count);
    set(&mut cfg.seed, args.seed);
    cfg.out = args.out.or(cfg.out);
    if cfg.sample_count == 0 {
        return usage("--L must be at least 1");
    }
    let model = CegModel::load(require(&cfg.model, "--model")?)?;
    let hist = load_dataset(require(&cfg.history, "--history")?)?;
    if hist.total_events() > 0 {
        check_marks(hist.mark_dim, model.arch.mark_dim, "history", "the model")?;
    }
    let key = StreamKey::new(cfg.seed).derive(tag::PREDICT);
    let preds = hist
        .sequences
        .par_iter()
        .enumerate()
        .map(|(i, s)| predict_next(&model, &s.events, cfg.sample_count, &mut key.derive(i as u64).rng()))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<ceg_core::Result<Vec<_>>>()?;
    let mut text = String::new();
    for p in preds {
        let line = PredictionLine {
            dt_mean: p.dt_mean,
            mark_mean: p.mark_mean,
            l: p.l,
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    match &cfg.out {
        Some(path) => {
            std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            write_json(&cfg, &sidecar(path, "config.json"))?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
