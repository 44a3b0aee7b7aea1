//! Learning: the KDE likelihood objective and the variational (CVAE) objective.
//!
//! Both losses are built per sequence on an autodiff graph in model units;
//! sequences of a batch are processed in parallel and their gradients summed
//! in sequence order, so results do not depend on the thread count.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::{Dataset, EventSequence};
use crate::error::{Error, Result};
use crate::kde::{default_k, knn_distances, CloudScaling, KdeConfig};
use crate::nets::{adam_step, clip_global_norm, AdamConfig, AdamState, CegModel, LatentSource};
use crate::rng::{tag, Rng, StreamKey};
use crate::stats::log_sum_exp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kde,
    Cvae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub lr: f64,
    /// sequences per batch
    pub batch_size: usize,
    /// generated samples per event for the KDE objective
    pub sample_count: usize,
    pub kde: KdeConfig,
    pub seed: u64,
    pub clip_norm: f64,
    pub sigma_obs: f64,
    pub pdf_floor: f64,
    /// reparametrized draws per event for the ELBO
    pub elbo_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Kde,
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            sample_count: 100,
            kde: KdeConfig {
                bandwidth_scale: 1.0,
                ..KdeConfig::default()
            },
            seed: 0,
            clip_norm: 5.0,
            sigma_obs: 0.1,
            pdf_floor: 1e-12,
            elbo_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.method == Method::Kde && self.sample_count < 2 {
            return bad("KDE training needs at least 2 samples per event");
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0 && self.sigma_obs > 0.0 && self.pdf_floor > 0.0) {
            return bad("lr, clip_norm, sigma_obs and pdf_floor must be positive");
        }
        if self.elbo_samples == 0 {
            return bad("elbo_samples must be at least 1");
        }
        self.kde.validate()
    }
}

/// Frozen per-sample kernel constants for a batch of clouds.
///
/// Row `j` holds the inverse bandwidth of sample `j` along every coordinate
/// (cloud scaling included) and the matching Gaussian normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub inv: Tensor,
    pub norm: Tensor,
}

impl KernelWeights {
    /// Bandwidths from `values` (`nL x dim`, clouds of `l` consecutive rows).
    pub fn from_samples(values: &Tensor, l: usize, kde: &KdeConfig) -> Result<Self> {
        let (rows, dim) = values.shape();
        let k = kde.k.unwrap_or_else(|| default_k(l));
        let mut inv = Tensor::zeros(rows, dim);
        let mut norm = Tensor::zeros(rows, 1);
        for (c, chunk) in values.data().chunks(l * dim).enumerate() {
            let scaling = if kde.standardize {
                CloudScaling::fit(chunk, dim)
            } else {
                CloudScaling::identity(dim)
            };
            let mut pts = chunk.to_vec();
            scaling.apply(&mut pts);
            let dist = knn_distances(&pts, dim, k)?;
            for (j, d) in dist.iter().enumerate() {
                let sigma = (kde.bandwidth_scale * d).max(kde.floor);
                let row = c * l + j;
                let mut prod = 1.0;
                for (dd, s) in scaling.scale.iter().enumerate() {
                    let w = 1.0 / (s * sigma);
                    inv.data_mut()[row * dim + dd] = w;
                    prod *= w;
                }
                norm.data_mut()[row] = prod * (-0.5 * dim as f64 * LN_2PI).exp();
            }
        }
        Ok(KernelWeights { inv, norm })
    }

    /// Explicit per-sample bandwidths, no scaling.
    pub fn from_bandwidths(sigma: &[f64], dim: usize) -> Self {
        let rows = sigma.len();
        let inv = Tensor::from_vec(
            rows,
            dim,
            sigma.iter().flat_map(|s| std::iter::repeat_n(1.0 / s, dim)).collect(),
        )
        .expect("sized");
        let norm = Tensor::column(
            &sigma
                .iter()
                .map(|s| (1.0 / s).powi(dim as i32) * (-0.5 * dim as f64 * LN_2PI).exp())
                .collect::<Vec<_>>(),
        );
        KernelWeights { inv, norm }
    }
}

/// `−Σ_i log max(f̂_i, floor)` where `f̂_i` is the reflected-time Gaussian KDE of
/// observation row `i` of `obs` built from rows `iL .. (i+1)L` of the samples.
#[allow(clippy::too_many_arguments)]
pub fn kde_nll_graph(
    g: &mut Graph,
    obs: &Tensor,
    dt: NodeId,
    marks: Option<NodeId>,
    weights: &KernelWeights,
    l: usize,
    reflect: bool,
    floor: f64,
) -> Result<NodeId> {
    let (n, dim) = obs.shape();
    let rows = n * l;
    if g.shape(dt) != (rows, 1) || weights.inv.shape() != (rows, dim) {
        return Err(Error::Shape {
            op: "kde_nll",
            left: g.shape(dt),
            right: (rows, dim),
        });
    }
    let rep = |col: usize, width: usize| {
        let mut t = Tensor::zeros(rows, width);
        for r in 0..rows {
            for c in 0..width {
                t.data_mut()[r * width + c] = obs.get(r / l, col + c);
            }
        }
        t
    };
    let cols = |t: &Tensor, start: usize, width: usize| {
        let mut out = Tensor::zeros(t.rows(), width);
        for r in 0..t.rows() {
            out.data_mut()[r * width..(r + 1) * width].copy_from_slice(&t.row_slice(r)[start..start + width]);
        }
        out
    };
    let x0 = g.constant(rep(0, 1));
    let w0 = g.constant(cols(&weights.inv, 0, 1));
    let gauss = |g: &mut Graph, u: NodeId| -> Result<NodeId> {
        let u = g.mul(u, w0)?;
        let u = g.square(u);
        let u = g.scale(u, -0.5);
        Ok(g.exp(u))
    };
    let diff = g.sub(x0, dt)?;
    let mut kern = gauss(g, diff)?;
    if reflect {
        let sum = g.add(x0, dt)?;
        let mirrored = gauss(g, sum)?;
        kern = g.add(kern, mirrored)?;
    }
    if let Some(m) = marks {
        let dm = dim - 1;
        let xm = g.constant(rep(1, dm));
        let wm = g.constant(cols(&weights.inv, 1, dm));
        let d = g.sub(xm, m)?;
        let u = g.mul(d, wm)?;
        let u = g.square(u);
        let u = g.row_sum(u);
        let u = g.scale(u, -0.5);
        let em = g.exp(u);
        kern = g.mul(kern, em)?;
    }
    let norm = g.constant(weights.norm.clone());
    let kern = g.mul(kern, norm)?;
    let f = g.segment_sum(kern, l)?;
    let f = g.scale(f, 1.0 / l as f64);
    let f = g.clamp_min(f, floor);
    let logf = g.log(f);
    let total = g.sum(logf);
    Ok(g.scale(total, -1.0))
}

/// Standardized `(gap, mark)` rows of a sequence.
pub fn model_inputs(model: &CegModel, seq: &EventSequence) -> Tensor {
    let dim = model.arch.event_width();
    let data = (0..seq.len())
        .flat_map(|i| model.standardization.encode_event(seq.gap(i), &seq.events[i].mark))
        .collect();
    Tensor::from_vec(seq.len(), dim, data).expect("sized")
}

/// `nL x r` standard normal draws.
pub fn normal_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .expect("sized")
}

/// KDE negative log-likelihood of one sequence on a fresh graph.
pub struct SequenceLoss {
    pub graph: Graph,
    /// model-unit negative log-likelihood summed over events (differentiable)
    pub loss: NodeId,
    /// the same in data units
    pub value: f64,
    pub events: usize,
    pub weights: KernelWeights,
}

/// Builds the KDE loss for `seq` with latent draws `z` (`nL x r`).
///
/// With `frozen = None` bandwidths come from the generated samples;
/// otherwise the given constants are reused (for finite-difference checks).
pub fn kde_sequence_loss(
    model: &CegModel,
    seq: &EventSequence,
    z: &Tensor,
    cfg: &TrainConfig,
    frozen: Option<&KernelWeights>,
) -> Result<SequenceLoss> {
    let n = seq.len();
    let l = cfg.sample_count;
    if n == 0 {
        return Err(Error::InvalidArgument("KDE loss needs a non-empty sequence".into()));
    }
    if z.shape() != (n * l, model.arch.noise_dim) {
        return Err(Error::Shape {
            op: "kde_sequence_loss",
            left: z.shape(),
            right: (n * l, model.arch.noise_dim),
        });
    }
    let obs = model_inputs(model, seq);
    let mut g = Graph::new();
    let x = g.constant(obs.clone());
    let (hs, _) = model.encode_graph(&mut g, x)?;
    let proj = model.history_projection(&mut g, hs)?;
    let idx: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, l)).collect();
    let proj = g.gather_rows(proj, idx)?;
    let zn = g.constant(z.clone());
    let (dt, marks) = model.generator_graph(&mut g, zn, proj)?;
    let weights = match frozen {
        Some(w) => w.clone(),
        None => {
            let samples = match marks {
                Some(m) => {
                    let both = g.concat_cols(&[dt, m])?;
                    g.value(both).clone()
                }
                None => g.value(dt).clone(),
            };
            KernelWeights::from_samples(&samples, l, &cfg.kde)?
        }
    };
    let log_j = model.standardization.log_jacobian();
    let floor = cfg.pdf_floor * (-log_j).exp();
    let loss = kde_nll_graph(&mut g, &obs, dt, marks, &weights, l, cfg.kde.reflect, floor)?;
    let value = g.value(loss).item() - n as f64 * log_j;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite KDE loss".into()));
    }
    Ok(SequenceLoss {
        graph: g,
        loss,
        value,
        events: n,
        weights,
    })
}

/// Mean per-event KDE loss over `batch` (no gradients); sequence `i` draws
/// its noise from `key.derive(i)`.
pub fn kde_loss(model: &CegModel, batch: &[EventSequence], cfg: &TrainConfig, key: StreamKey) -> Result<f64> {
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            if seq.is_empty() {
                return Ok((0.0, 0));
            }
            let z = normal_tensor(
                seq.len() * cfg.sample_count,
                model.arch.noise_dim,
                &mut key.derive(i as u64).rng(),
            );
            let s = kde_sequence_loss(model, seq, &z, cfg, None).map_err(|e| locate(e, i))?;
            Ok((s.value, s.events))
        })
        .collect::<Vec<Result<(f64, usize)>>>();
    mean_of(parts)
}

fn mean_of(parts: Vec<Result<(f64, usize)>>) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for p in parts {
        let (v, k) = p?;
        total += v;
        n += k;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no events to evaluate".into()));
    }
    Ok(total / n as f64)
}

fn locate(e: Error, seq: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("sequence {seq}: {m}")),
        other => other,
    }
}

/// `KL(N(mu_q, e^{lv_q}) || N(mu_p, e^{lv_p}))` summed over dimensions.
pub fn gaussian_kl(mu_q: &[f64], logvar_q: &[f64], mu_p: &[f64], logvar_p: &[f64]) -> f64 {
    mu_q.iter()
        .zip(logvar_q)
        .zip(mu_p.iter().zip(logvar_p))
        .map(|((mq, lq), (mp, lp))| 0.5 * (lp - lq + (lq - lp).exp() + (mq - mp) * (mq - mp) * (-lp).exp() - 1.0))
        .sum()
}

/// Single-draw ELBO of one event in model units: `−KL + log N(x; g(z, h), σ_obs²)`.
///
/// `gap` and `mark` are in data units; `eps` is the reparametrization noise.
pub fn elbo(model: &CegModel, gap: f64, mark: &[f64], h: &[f64], eps: &[f64], sigma_obs: f64) -> Result<f64> {
    let nets = model
        .cvae()
        .ok_or_else(|| Error::InvalidArgument("model has no variational nets".into()))?;
    let (mu_q, lv_q) = nets.encoder_params(model, gap, mark, h)?;
    let (mu_p, lv_p) = nets.prior_params(model, h)?;
    let z: Vec<f64> = mu_q
        .iter()
        .zip(&lv_q)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    let recon = reconstruction(model, gap, mark, &z, h, sigma_obs)?;
    Ok(recon - gaussian_kl(&mu_q, &lv_q, &mu_p, &lv_p))
}

/// `log N(x; g(z, h), σ_obs² I)` in model units.
pub fn reconstruction(model: &CegModel, gap: f64, mark: &[f64], z: &[f64], h: &[f64], sigma_obs: f64) -> Result<f64> {
    let zt = Tensor::from_vec(1, z.len(), z.to_vec())?;
    let (dt, marks) = model.generate_batch_model(&zt, h)?;
    let x = model.standardization.encode_event(gap, mark);
    let dec: Vec<f64> = std::iter::once(dt[0]).chain(marks[0].iter().copied()).collect();
    let sq: f64 = x.iter().zip(&dec).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = x.len() as f64;
    Ok(-0.5 * sq / (sigma_obs * sigma_obs) - 0.5 * d * (LN_2PI + 2.0 * sigma_obs.ln()))
}

/// Importance-sampling estimate of `log p(x | h)` with `n` draws from the prior net.
/// Returns the estimate and its delta-method standard error.
pub fn log_evidence_is(
    model: &CegModel,
    gap: f64,
    mark: &[f64],
    h: &[f64],
    n: usize,
    sigma_obs: f64,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let nets = model
        .cvae()
        .ok_or_else(|| Error::InvalidArgument("model has no variational nets".into()))?;
    let (mu, lv) = nets.prior_params(model, h)?;
    let logw = (0..n)
        .map(|_| {
            let z: Vec<f64> = mu
                .iter()
                .zip(&lv)
                .map(|(m, l)| m + (0.5 * l).exp() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            reconstruction(model, gap, mark, &z, h, sigma_obs)
        })
        .collect::<Result<Vec<f64>>>()?;
    let est = log_sum_exp(&logw) - (n as f64).ln();
    let w: Vec<f64> = logw.iter().map(|v| (v - est).exp()).collect();
    let (_, se_w) = crate::stats::mean_and_se(&w);
    Ok((est, se_w))
}

/// Negative ELBO summed over the events of one sequence (model units).
///
/// `eps` holds `elbo_samples` blocks of `n x r` noise stacked by rows.
pub fn elbo_sequence_loss(
    model: &CegModel,
    seq: &EventSequence,
    eps: &Tensor,
    cfg: &TrainConfig,
) -> Result<(Graph, NodeId, f64)> {
    let nets = model
        .cvae()
        .ok_or_else(|| Error::InvalidArgument("model has no variational nets".into()))?;
    let n = seq.len();
    let r = model.arch.noise_dim;
    let s = cfg.elbo_samples;
    if n == 0 {
        return Err(Error::InvalidArgument("ELBO needs a non-empty sequence".into()));
    }
    if eps.shape() != (n * s, r) {
        return Err(Error::Shape {
            op: "elbo_sequence_loss",
            left: eps.shape(),
            right: (n * s, r),
        });
    }
    let dim = model.arch.event_width();
    let obs = model_inputs(model, seq);
    let mut g = Graph::new();
    let x = g.constant(obs);
    let (hs, _) = model.encode_graph(&mut g, x)?;
    let enc_in = g.concat_cols(&[x, hs])?;
    let q = nets.encoder.forward(&mut g, &model.params, enc_in)?;
    let p = nets.prior.forward(&mut g, &model.params, hs)?;
    let mu_q = g.slice_cols(q, 0, r)?;
    let lv_q = g.slice_cols(q, r, r)?;
    let mu_p = g.slice_cols(p, 0, r)?;
    let lv_p = g.slice_cols(p, r, r)?;

    // closed-form KL, summed over events and dimensions
    let dlv = g.sub(lv_p, lv_q)?;
    let neg = g.scale(dlv, -1.0);
    let ratio = g.exp(neg);
    let dmu = g.sub(mu_q, mu_p)?;
    let dmu2 = g.square(dmu);
    let neg_lvp = g.scale(lv_p, -1.0);
    let prec = g.exp(neg_lvp);
    let maha = g.mul(dmu2, prec)?;
    let kl = g.add(dlv, ratio)?;
    let kl = g.add(kl, maha)?;
    let kl = g.add_scalar(kl, -1.0);
    let kl = g.sum(kl);
    let kl = g.scale(kl, 0.5);

    let proj = model.history_projection(&mut g, hs)?;
    let half = g.scale(lv_q, 0.5);
    let std_q = g.exp(half);
    let mut recon_terms = Vec::with_capacity(s);
    for k in 0..s {
        let e = Tensor::from_vec(n, r, eps.data()[k * n * r..(k + 1) * n * r].to_vec())?;
        let e = g.constant(e);
        let noise = g.mul(std_q, e)?;
        let z = g.add(mu_q, noise)?;
        let (dt, marks) = model.generator_graph(&mut g, z, proj)?;
        let dec = match marks {
            Some(m) => g.concat_cols(&[dt, m])?,
            None => dt,
        };
        let diff = g.sub(x, dec)?;
        let sq = g.square(diff);
        recon_terms.push(g.sum(sq));
    }
    let mut sq_total = recon_terms[0];
    for &t in &recon_terms[1..] {
        sq_total = g.add(sq_total, t)?;
    }
    let so2 = cfg.sigma_obs * cfg.sigma_obs;
    // −recon = ½ Σ sq / σ² + n d/2 log(2π σ²), averaged over draws
    let nrec = g.scale(sq_total, 0.5 / so2 / s as f64);
    let nrec = g.add_scalar(nrec, 0.5 * (n * dim) as f64 * (LN_2PI + so2.ln()));
    let loss = g.add(nrec, kl)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite ELBO".into()));
    }
    Ok((g, loss, value))
}

/// Mean per-event ELBO over `batch`, in data units (includes the standardization Jacobian).
pub fn elbo_per_event(model: &CegModel, batch: &[EventSequence], cfg: &TrainConfig, key: StreamKey) -> Result<f64> {
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            if seq.is_empty() {
                return Ok((0.0, 0));
            }
            let eps = normal_tensor(
                seq.len() * cfg.elbo_samples,
                model.arch.noise_dim,
                &mut key.derive(i as u64).rng(),
            );
            let (_, _, v) = elbo_sequence_loss(model, seq, &eps, cfg).map_err(|e| locate(e, i))?;
            Ok((-v, seq.len()))
        })
        .collect::<Vec<Result<(f64, usize)>>>();
    Ok(mean_of(parts)? + model.standardization.log_jacobian())
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CegModel,
    pub log: Vec<EpochLog>,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,heldout_loss,wall_seconds\n");
    for r in log {
        let valid = r.valid_loss.map(|v| format!("{v:.10e}")).unwrap_or_default();
        let _ = writeln!(out, "{},{:.10e},{},{:.3}", r.epoch, r.train_loss, valid, r.wall_seconds);
    }
    out
}

pub fn write_log_csv(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, log_csv(log)).map_err(|e| Error::io(path, e))
}

/// Held-out objective in the same units as the training loss.
pub fn heldout_loss(model: &CegModel, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let key = StreamKey::new(cfg.seed).derive(tag::HOLDOUT);
    match cfg.method {
        Method::Kde => kde_loss(model, &data.sequences, cfg, key),
        Method::Cvae => Ok(-elbo_per_event(model, &data.sequences, cfg, key)?),
    }
}

/// Per-sequence loss and parameter gradients.
fn sequence_grad(
    model: &CegModel,
    seq: &EventSequence,
    cfg: &TrainConfig,
    key: StreamKey,
) -> Result<(f64, Vec<crate::autodiff::Tensor>)> {
    match cfg.method {
        Method::Kde => {
            let z = normal_tensor(
                seq.len() * cfg.sample_count,
                model.arch.noise_dim,
                &mut key.derive(tag::NOISE_Z).rng(),
            );
            let s = kde_sequence_loss(model, seq, &z, cfg, None)?;
            let grads = s.graph.backward(s.loss)?;
            Ok((s.value, grads.param_grads(&model.params)))
        }
        Method::Cvae => {
            let eps = normal_tensor(
                seq.len() * cfg.elbo_samples,
                model.arch.noise_dim,
                &mut key.derive(tag::NOISE_EPS).rng(),
            );
            let (g, loss, v) = elbo_sequence_loss(model, seq, &eps, cfg)?;
            let grads = g.backward(loss)?;
            Ok((
                v - seq.len() as f64 * model.standardization.log_jacobian(),
                grads.param_grads(&model.params),
            ))
        }
    }
}

/// Trains `model` on `data` with the objective selected by `cfg.method`.
pub fn train(model: CegModel, data: &Dataset, valid: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.mark_dim != model.arch.mark_dim {
        return Err(Error::InvalidArgument(format!(
            "data has {} mark dimensions, model expects {}",
            data.mark_dim, model.arch.mark_dim
        )));
    }
    if cfg.method == Method::Cvae && model.cvae().is_none() {
        return Err(Error::InvalidArgument(
            "variational training needs a model with encoder and prior nets".into(),
        ));
    }
    let mut model = model;
    let start = Instant::now();
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let usable: Vec<usize> = (0..data.len()).filter(|&i| !data.sequences[i].is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::InvalidArgument("training data has no events".into()));
    }
    let root = StreamKey::new(cfg.seed);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut root.derive(tag::SHUFFLE).derive(epoch as u64).rng());
        let epoch_key = root.derive(tag::TRAIN).derive(epoch as u64);
        let (mut total, mut events) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&i| {
                    sequence_grad(&model, &data.sequences[i], cfg, epoch_key.derive(i as u64)).map_err(|e| locate(e, i))
                })
                .collect();
            let mut grads = model.params.zeros_like();
            let mut batch_events = 0usize;
            for (p, &i) in parts.into_iter().zip(batch) {
                let (v, g) = p.map_err(|e| at_batch(e, epoch, b))?;
                total += v;
                batch_events += data.sequences[i].len();
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.add_assign(gi);
                }
            }
            events += batch_events;
            let inv = 1.0 / batch_events as f64;
            for gr in &mut grads {
                for v in gr.data_mut() {
                    *v *= inv;
                }
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(&mut model.params, &grads, &mut adam).map_err(|e| at_batch(e, epoch, b))?;
        }
        let valid_loss = valid.map(|v| heldout_loss(&model, v, cfg)).transpose()?;
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss: total / events as f64,
            valid_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    if cfg.method == Method::Cvae {
        model.latent = LatentSource::PriorNet;
    }
    Ok(TrainOutcome { model, log })
}

fn at_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {}, batch {batch}: {m}", epoch + 1)),
        other => other,
    }
}

/// KDE (non-parametric likelihood) training.
pub fn train_nonparametric(
    model: CegModel,
    data: &Dataset,
    valid: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.method != Method::Kde {
        return Err(Error::InvalidArgument("train_nonparametric needs method = kde".into()));
    }
    train(model, data, valid, cfg)
}

/// Variational (CVAE) training; afterwards the model samples `z` from the prior net.
pub fn train_variational(
    model: CegModel,
    data: &Dataset,
    valid: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.method != Method::Cvae {
        return Err(Error::InvalidArgument("train_variational needs method = cvae".into()));
    }
    train(model, data, valid, cfg)
}
