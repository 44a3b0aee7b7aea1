//! Resolved run configurations, JSON overlay and shared flag groups.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ceg_core::ceg::GenerationConfig;
use ceg_core::classical::{ClassicalModel, EtasParams, SpatialBox};
use ceg_core::eval::EvalConfig;
use ceg_core::train::TrainConfig;

/// Bad flags or flag combinations (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Input files that do not fit together (exit code 3).
#[derive(Debug)]
pub struct DataMismatch(pub String);

impl fmt::Display for DataMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataMismatch {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

/// Starting point for a command: the `--config` file if given, else defaults.
pub fn base_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
}

/// `<out without extension>.<suffix>`, e.g. `d.jsonl` -> `d.config.json`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    match v {
        Some(v) => Ok(v),
        None => usage(format!("{flag} is required")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    SelfExciting,
    SelfCorrecting,
    Poisson,
    Etas,
}

/// Parameters of a classical process; which ones are needed depends on the model.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Poisson rate
    #[arg(long)]
    pub rate: Option<f64>,
    /// ETAS triggering mass
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma_x: Option<f64>,
    #[arg(long)]
    pub sigma_y: Option<f64>,
    /// ETAS spatial drift `ax,ay`
    #[arg(long, value_parser = parse_pair)]
    pub a: Option<[f64; 2]>,
    /// ETAS domain `x0,x1,y0,y1`
    #[arg(long, value_parser = parse_box)]
    pub domain: Option<SpatialBox>,
}

fn parse_floats(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let v = parse_floats(s, 2)?;
    Ok([v[0], v[1]])
}

fn parse_box(s: &str) -> std::result::Result<SpatialBox, String> {
    let v = parse_floats(s, 4)?;
    Ok(SpatialBox {
        x: [v[0], v[1]],
        y: [v[2], v[3]],
    })
}

/// `lo:hi,lo:hi,...`
pub fn parse_bounds(s: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part.split_once(':').ok_or_else(|| format!("'{part}' is not lo:hi"))?;
            let lo: f64 = lo.trim().parse().map_err(|e| format!("'{lo}': {e}"))?;
            let hi: f64 = hi.trim().parse().map_err(|e| format!("'{hi}': {e}"))?;
            if lo >= hi {
                return Err(format!("empty interval {lo}:{hi}"));
            }
            Ok((lo, hi))
        })
        .collect()
}

impl ModelFlags {
    fn any(&self) -> bool {
        self.mu.is_some()
            || self.beta.is_some()
            || self.alpha.is_some()
            || self.rate.is_some()
            || self.c.is_some()
            || self.sigma_x.is_some()
            || self.sigma_y.is_some()
            || self.a.is_some()
            || self.domain.is_some()
    }

    /// Builds the model named by `kind` (or overrides `base` when no kind is
    /// given). Parameters missing from the flags are taken from `base` when it
    /// is the same kind of model. `flag` names the selecting flag in messages.
    pub fn resolve(
        &self,
        kind: Option<ModelKind>,
        base: Option<ClassicalModel>,
        flag: &str,
    ) -> Result<Option<ClassicalModel>> {
        let kind = match (kind, base) {
            (Some(k), _) => k,
            (None, Some(b)) => kind_of(&b),
            (None, None) if self.any() => return usage(format!("model parameters given without {flag}")),
            (None, None) => return Ok(None),
        };
        let base = base.filter(|b| kind_of(b) == kind);
        let pick = |v: Option<f64>, from_base: Option<f64>, name: &str| -> Result<f64> {
            match v.or(from_base) {
                Some(x) => Ok(x),
                None => usage(format!("--{name} is required for {flag} {}", kind_name(kind))),
            }
        };
        let model = match kind {
            ModelKind::SelfExciting => {
                let (bm, bb) = match base {
                    Some(ClassicalModel::SelfExciting { mu, beta }) => (Some(mu), Some(beta)),
                    _ => (None, None),
                };
                ClassicalModel::SelfExciting {
                    mu: pick(self.mu, bm, "mu")?,
                    beta: pick(self.beta, bb, "beta")?,
                }
            }
            ModelKind::SelfCorrecting => {
                let (bm, ba) = match base {
                    Some(ClassicalModel::SelfCorrecting { mu, alpha }) => (Some(mu), Some(alpha)),
                    _ => (None, None),
                };
                ClassicalModel::SelfCorrecting {
                    mu: pick(self.mu, bm, "mu")?,
                    alpha: pick(self.alpha, ba, "alpha")?,
                }
            }
            ModelKind::Poisson => {
                let br = match base {
                    Some(ClassicalModel::Poisson { rate }) => Some(rate),
                    _ => None,
                };
                ClassicalModel::Poisson {
                    rate: pick(self.rate, br, "rate")?,
                }
            }
            ModelKind::Etas => {
                let b = match base {
                    Some(ClassicalModel::Etas(p)) => Some(p),
                    _ => None,
                };
                let a = match self.a.or(b.map(|p| p.a)) {
                    Some(a) => a,
                    None => return usage(format!("--a is required for {flag} etas")),
                };
                let domain = match self.domain.or(b.map(|p| p.domain)) {
                    Some(d) => d,
                    None => return usage(format!("--domain is required for {flag} etas")),
                };
                ClassicalModel::Etas(EtasParams {
                    mu: pick(self.mu, b.map(|p| p.mu), "mu")?,
                    c: pick(self.c, b.map(|p| p.c), "c")?,
                    beta: pick(self.beta, b.map(|p| p.beta), "beta")?,
                    sigma_x: pick(self.sigma_x, b.map(|p| p.sigma_x), "sigma-x")?,
                    sigma_y: pick(self.sigma_y, b.map(|p| p.sigma_y), "sigma-y")?,
                    a,
                    domain,
                })
            }
        };
        if let Err(e) = model.validate() {
            return usage(format!("{flag} {}: {e}", kind_name(kind)));
        }
        Ok(Some(model))
    }
}

fn kind_of(m: &ClassicalModel) -> ModelKind {
    match m {
        ClassicalModel::Poisson { .. } => ModelKind::Poisson,
        ClassicalModel::SelfExciting { .. } => ModelKind::SelfExciting,
        ClassicalModel::SelfCorrecting { .. } => ModelKind::SelfCorrecting,
        ClassicalModel::Etas(_) => ModelKind::Etas,
    }
}

fn kind_name(k: ModelKind) -> &'static str {
    match k {
        ModelKind::SelfExciting => "self-exciting",
        ModelKind::SelfCorrecting => "self-correcting",
        ModelKind::Poisson => "poisson",
        ModelKind::Etas => "etas",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub command: String,
    pub model: Option<ClassicalModel>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_seqs: usize,
    pub seed: u64,
    /// constant thinning bound; adaptive when absent
    pub bound: Option<f64>,
    pub retries: usize,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            command: "simulate".into(),
            model: None,
            horizon: 100.0,
            n_seqs: 100,
            seed: 0,
            bound: None,
            retries: 0,
            out: None,
        }
    }
}

/// Network sizes; the mark dimension comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub noise_dim: usize,
    pub hidden_dim: usize,
    pub generator_widths: Vec<usize>,
    pub cvae_width: usize,
    pub dt_floor: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let a = ceg_core::nets::Architecture::new(0);
        ArchConfig {
            noise_dim: a.noise_dim,
            hidden_dim: a.hidden_dim,
            generator_widths: a.generator_widths,
            cvae_width: a.cvae_width,
            dt_floor: a.dt_floor,
        }
    }
}

impl ArchConfig {
    pub fn architecture(&self, mark_dim: usize) -> ceg_core::nets::Architecture {
        ceg_core::nets::Architecture {
            noise_dim: self.noise_dim,
            hidden_dim: self.hidden_dim,
            mark_dim,
            generator_widths: self.generator_widths.clone(),
            cvae_width: self.cvae_width,
            dt_floor: self.dt_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub command: String,
    pub data: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    /// held-out fraction split off `data` when no `valid` file is given
    pub holdout_frac: f64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            command: "train".into(),
            data: None,
            valid: None,
            holdout_frac: 0.1,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            out: None,
            log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub command: String,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub truth: Option<ClassicalModel>,
    pub eval: EvalConfig,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            command: "evaluate".into(),
            model: None,
            data: None,
            truth: None,
            eval: EvalConfig::default(),
            out: None,
            plot: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub command: String,
    pub model: Option<PathBuf>,
    pub n_seqs: usize,
    pub generation: GenerationConfig,
    pub out: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            command: "generate".into(),
            model: None,
            n_seqs: 10,
            generation: GenerationConfig::default(),
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub command: String,
    pub model: Option<PathBuf>,
    pub history: Option<PathBuf>,
    #[serde(rename = "L")]
    pub sample_count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            command: "predict".into(),
            model: None,
            history: None,
            sample_count: 1000,
            seed: 0,
            out: None,
        }
    }
}

/// Rejects a config file written for a different command.
pub fn check_command(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return usage(format!("config is for '{found}', not '{expected}'"));
    }
    Ok(())
}
