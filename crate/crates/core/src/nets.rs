//! Generator, history encoder, variational nets and the Adam optimizer.
//!
//! All networks read their weights from the model's [`ParamSet`] so that a
//! single optimizer state covers every trainable array. Inside the model,
//! gaps are divided by `gap_scale` (no shift, so the time boundary stays at
//! zero) and marks are centered and scaled; the public entry points take and
//! return values in data units.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamSet, Tensor};
use crate::data::{fmt_f64, Dataset, Event};
use crate::error::{Error, Result};
use crate::rng::{Rng, StreamKey};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// `r`
    pub noise_dim: usize,
    /// `p`, the LSTM state width
    pub hidden_dim: usize,
    pub mark_dim: usize,
    pub generator_widths: Vec<usize>,
    pub cvae_width: usize,
    pub dt_floor: f64,
}

impl Architecture {
    pub fn new(mark_dim: usize) -> Self {
        Architecture {
            noise_dim: 16,
            hidden_dim: 64,
            mark_dim,
            generator_widths: vec![32, 32],
            cvae_width: 32,
            dt_floor: 1e-6,
        }
    }

    pub fn event_width(&self) -> usize {
        1 + self.mark_dim
    }

    fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.hidden_dim == 0 || self.generator_widths.is_empty() {
            return Err(Error::InvalidArgument(
                "noise_dim, hidden_dim and generator widths must be non-zero".into(),
            ));
        }
        if self.generator_widths.contains(&0) || self.cvae_width == 0 {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if !(self.dt_floor > 0.0 && self.dt_floor.is_finite()) {
            return Err(Error::InvalidArgument("dt_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dimension scaling applied before any network sees an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub gap_scale: f64,
    pub mark_mean: Vec<f64>,
    pub mark_scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(mark_dim: usize) -> Self {
        Standardization {
            gap_scale: 1.0,
            mark_mean: vec![0.0; mark_dim],
            mark_scale: vec![1.0; mark_dim],
        }
    }

    /// Gap scale is the root mean square gap; marks use mean and standard deviation.
    pub fn fit(ds: &Dataset) -> Self {
        let mut n = 0usize;
        let mut gap_sq = 0.0;
        let dm = ds.mark_dim;
        let mut sum = vec![0.0; dm];
        let mut sum_sq = vec![0.0; dm];
        for seq in &ds.sequences {
            for i in 0..seq.len() {
                let g = seq.gap(i);
                gap_sq += g * g;
                for (d, m) in seq.events[i].mark.iter().enumerate() {
                    sum[d] += m;
                    sum_sq[d] += m * m;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(dm);
        }
        let nf = n as f64;
        let gap_scale = (gap_sq / nf).sqrt();
        let mark_mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let mark_scale = sum_sq
            .iter()
            .zip(&mark_mean)
            .map(|(s2, m)| {
                let var = s2 / nf - m * m;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardization {
            gap_scale: if gap_scale > 0.0 { gap_scale } else { 1.0 },
            mark_mean,
            mark_scale,
        }
    }

    pub fn gap_to_model(&self, gap: f64) -> f64 {
        gap / self.gap_scale
    }

    pub fn mark_to_model(&self, mark: &[f64]) -> Vec<f64> {
        mark.iter()
            .zip(self.mark_mean.iter().zip(&self.mark_scale))
            .map(|(m, (mu, s))| (m - mu) / s)
            .collect()
    }

    pub fn mark_from_model(&self, mark: &[f64]) -> Vec<f64> {
        mark.iter()
            .zip(self.mark_mean.iter().zip(&self.mark_scale))
            .map(|(m, (mu, s))| m * s + mu)
            .collect()
    }

    /// `log |d(model)/d(data)|`: add to a model-space log-density to get data units.
    pub fn log_jacobian(&self) -> f64 {
        -self.gap_scale.ln() - self.mark_scale.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// The ψ input row for an event with gap `gap`.
    pub fn encode_event(&self, gap: f64, mark: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(1 + mark.len());
        row.push(self.gap_to_model(gap));
        row.extend(self.mark_to_model(mark));
        row
    }
}

/// Where the generator's noise comes from at generation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    StandardNormal,
    PriorNet,
}

/// A dense layer `y = x W^T + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn new(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let w = ps.push(
            format!("{name}.weight"),
            Tensor::from_vec(fan_out, fan_in, w).expect("sized"),
        );
        let b = ps.push(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: NodeId) -> Result<NodeId> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.affine(w, x, b)
    }
}

/// Softplus MLP with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    fn new(ps: &mut ParamSet, name: &str, widths: &[usize], rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(ps, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, ps, h)?;
            if i + 1 < self.layers.len() {
                h = g.softplus(h);
            }
        }
        Ok(h)
    }
}

/// LSTM weights; gate order is input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    fn new(ps: &mut ParamSet, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let v = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_vec(rows, cols, v).expect("sized")
        };
        let w_ih = glorot(4 * hidden, input);
        let w_hh = glorot(4 * hidden, hidden);
        let mut b = Tensor::zeros(1, 4 * hidden);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        Lstm {
            w_ih: ps.push("encoder.w_ih", w_ih),
            w_hh: ps.push("encoder.w_hh", w_hh),
            bias: ps.push("encoder.bias", b),
        }
    }
}

/// Handles into the encoder (`q(z|x,h)`) and prior (`p(z|h)`) nets.
///
/// Both output `(mu, log diag Sigma)` concatenated, width `2 r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeNets {
    pub encoder: Mlp,
    pub prior: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    generator: Mlp,
    lstm: Lstm,
    cvae: Option<CvaeNets>,
}

/// Generator `g`, history encoder `ψ` and (optionally) the variational nets.
#[derive(Debug, Clone, PartialEq)]
pub struct CegModel {
    pub arch: Architecture,
    pub standardization: Standardization,
    pub latent: LatentSource,
    pub params: ParamSet,
    layout: Layout,
}

/// LSTM state `(h, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(p: usize) -> Self {
        LstmState {
            h: vec![0.0; p],
            c: vec![0.0; p],
        }
    }
}

fn build_layout(arch: &Architecture, with_cvae: bool, rng: &mut Rng) -> (ParamSet, Layout) {
    let mut ps = ParamSet::new();
    let mut widths = vec![arch.noise_dim + arch.hidden_dim];
    widths.extend(&arch.generator_widths);
    widths.push(arch.event_width());
    let generator = Mlp::new(&mut ps, "generator", &widths, rng);
    let lstm = Lstm::new(&mut ps, arch.event_width(), arch.hidden_dim, rng);
    let cvae = with_cvae.then(|| CvaeNets {
        encoder: Mlp::new(
            &mut ps,
            "cvae.encoder",
            &[
                arch.event_width() + arch.hidden_dim,
                arch.cvae_width,
                2 * arch.noise_dim,
            ],
            rng,
        ),
        prior: Mlp::new(
            &mut ps,
            "cvae.prior",
            &[arch.hidden_dim, arch.cvae_width, 2 * arch.noise_dim],
            rng,
        ),
    });
    (ps, Layout { generator, lstm, cvae })
}

impl CegModel {
    /// Freshly initialized model. `with_cvae` adds the encoder and prior nets.
    pub fn init(arch: Architecture, standardization: Standardization, with_cvae: bool, key: StreamKey) -> Result<Self> {
        arch.validate()?;
        if standardization.mark_mean.len() != arch.mark_dim || standardization.mark_scale.len() != arch.mark_dim {
            return Err(Error::InvalidArgument(
                "standardization does not match mark dimension".into(),
            ));
        }
        let mut rng = key.rng();
        let (params, layout) = build_layout(&arch, with_cvae, &mut rng);
        let mut model = CegModel {
            arch,
            standardization,
            latent: LatentSource::StandardNormal,
            params,
            layout,
        };
        model.center_time_head(&mut rng)?;
        Ok(model)
    }

    /// Shifts the time-head bias so the pre-ReLU output averages one
    /// (the typical standardized gap) over a probe of noise draws with an
    /// empty history. Without this a random init can leave the ReLU dead for
    /// every `z`, and the KDE loss then has no gradient.
    fn center_time_head(&mut self, rng: &mut Rng) -> Result<()> {
        let probe = 256;
        let r = self.arch.noise_dim;
        let width = r + self.arch.hidden_dim;
        let mut x = Tensor::zeros(probe, width);
        for i in 0..probe {
            for j in 0..r {
                x.data_mut()[i * width + j] = rng.sample(StandardNormal);
            }
        }
        let mut g = Graph::new();
        let xn = g.constant(x);
        let out = self.layout.generator.forward(&mut g, &self.params, xn)?;
        let v = g.value(out);
        let mean = (0..probe).map(|i| v.get(i, 0)).sum::<f64>() / probe as f64;
        let last = *self.layout.generator.layers.last().expect("generator has layers");
        self.params.get_mut(last.b).data_mut()[0] += 1.0 - mean;
        Ok(())
    }

    pub fn generator(&self) -> &Mlp {
        &self.layout.generator
    }

    pub fn lstm(&self) -> Lstm {
        self.layout.lstm
    }

    pub fn cvae(&self) -> Option<&CvaeNets> {
        self.layout.cvae.as_ref()
    }

    pub fn dt_floor_model(&self) -> f64 {
        self.arch.dt_floor / self.standardization.gap_scale
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Generator over a batch in model units.
    ///
    /// `z` is `N x r`; `hist_proj` is `N x w1` and holds each row's history
    /// contribution to the first layer (see [`CegModel::history_projection`]).
    /// Returns `(dt, marks)` with `dt: N x 1` floored at `dt_floor` and
    /// `marks: N x d_m` (`None` when `d_m = 0`).
    pub fn generator_graph(&self, g: &mut Graph, z: NodeId, hist_proj: NodeId) -> Result<(NodeId, Option<NodeId>)> {
        let r = self.arch.noise_dim;
        let layers = &self.layout.generator.layers;
        let first = layers[0];
        let w = g.param(&self.params, first.w);
        let wz = g.slice_cols(w, 0, r)?;
        let b = g.param(&self.params, first.b);
        let mut h = g.matmul_nt(z, wz)?;
        h = g.add(h, hist_proj)?;
        h = g.add_row_bias(h, b)?;
        for layer in &layers[1..] {
            h = g.softplus(h);
            h = layer.forward(g, &self.params, h)?;
        }
        let raw_dt = g.slice_cols(h, 0, 1)?;
        let dt = g.relu(raw_dt);
        let dt = g.clamp_min(dt, self.dt_floor_model());
        let marks = if self.arch.mark_dim > 0 {
            Some(g.slice_cols(h, 1, self.arch.mark_dim)?)
        } else {
            None
        };
        Ok((dt, marks))
    }

    /// `H W_h^T` for history rows `H: n x p`, the history half of the first layer.
    pub fn history_projection(&self, g: &mut Graph, hist: NodeId) -> Result<NodeId> {
        let first = self.layout.generator.layers[0];
        let w = g.param(&self.params, first.w);
        let wh = g.slice_cols(w, self.arch.noise_dim, self.arch.hidden_dim)?;
        g.matmul_nt(hist, wh)
    }

    /// Runs ψ over `inputs: n x (1 + d_m)` (already standardized).
    ///
    /// Returns the `n x p` matrix of embeddings `h_0 .. h_{n-1}`, i.e. row `i`
    /// summarizes events strictly before event `i`, plus the final `h_n`.
    pub fn encode_graph(&self, g: &mut Graph, inputs: NodeId) -> Result<(NodeId, NodeId)> {
        let p = self.arch.hidden_dim;
        let n = g.shape(inputs).0;
        let lstm = self.layout.lstm;
        let w_ih = g.param(&self.params, lstm.w_ih);
        let w_hh = g.param(&self.params, lstm.w_hh);
        let bias = g.param(&self.params, lstm.bias);
        let pre = g.affine(w_ih, inputs, bias)?;
        let mut h = g.constant(Tensor::zeros(1, p));
        let mut c = g.constant(Tensor::zeros(1, p));
        let mut hs = Vec::with_capacity(n);
        for i in 0..n {
            hs.push(h);
            let xi = g.slice_rows(pre, i, 1)?;
            let rec = g.matmul_nt(h, w_hh)?;
            let gates = g.add(xi, rec)?;
            (h, c) = self.lstm_cell(g, gates, c)?;
        }
        let stacked = if n == 0 {
            g.constant(Tensor::zeros(0, p))
        } else {
            g.concat_rows(&hs)?
        };
        Ok((stacked, h))
    }

    fn lstm_cell(&self, g: &mut Graph, gates: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let p = self.arch.hidden_dim;
        let i = g.slice_cols(gates, 0, p)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(gates, p, p)?;
        let f = g.sigmoid(f);
        let cand = g.slice_cols(gates, 2 * p, p)?;
        let cand = g.tanh(cand);
        let o = g.slice_cols(gates, 3 * p, p)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// One ψ update for an event given as `(gap, mark)` in data units.
    pub fn lstm_step(&self, gap: f64, mark: &[f64], state: &LstmState) -> Result<LstmState> {
        let row = self.standardization.encode_event(gap, mark);
        self.lstm_step_model(&row, state)
    }

    /// One ψ update with an already standardized input row.
    pub fn lstm_step_model(&self, input: &[f64], state: &LstmState) -> Result<LstmState> {
        let p = self.arch.hidden_dim;
        if state.h.len() != p || state.c.len() != p || input.len() != self.arch.event_width() {
            return Err(Error::Shape {
                op: "lstm_step",
                left: (state.h.len(), input.len()),
                right: (p, self.arch.event_width()),
            });
        }
        let lstm = self.layout.lstm;
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(input));
        let h = g.constant(Tensor::row(&state.h));
        let c = g.constant(Tensor::row(&state.c));
        let w_ih = g.param(&self.params, lstm.w_ih);
        let w_hh = g.param(&self.params, lstm.w_hh);
        let bias = g.param(&self.params, lstm.bias);
        let xi = g.affine(w_ih, x, bias)?;
        let rec = g.matmul_nt(h, w_hh)?;
        let gates = g.add(xi, rec)?;
        let (h2, c2) = self.lstm_cell(&mut g, gates, c)?;
        Ok(LstmState {
            h: g.value(h2).data().to_vec(),
            c: g.value(c2).data().to_vec(),
        })
    }

    /// Embedding of a history prefix; the empty prefix maps to `h_0 = 0`.
    pub fn encode_history(&self, prefix: &[Event]) -> Result<Vec<f64>> {
        Ok(self.encode_history_state(prefix)?.h)
    }

    pub fn encode_history_state(&self, prefix: &[Event]) -> Result<LstmState> {
        let mut state = LstmState::zeros(self.arch.hidden_dim);
        let mut prev = 0.0;
        for (i, ev) in prefix.iter().enumerate() {
            if i > 0 && ev.time <= prev {
                return Err(Error::InvalidArgument(format!(
                    "history times not strictly increasing at index {i}"
                )));
            }
            state = self.lstm_step(ev.time - prev, &ev.mark, &state)?;
            prev = ev.time;
        }
        Ok(state)
    }

    /// `g(z, h)` for a single noise vector, in data units.
    ///
    /// Marks are clamped to `mark_bounds` when given.
    pub fn generator_forward(
        &self,
        z: &[f64],
        h: &[f64],
        mark_bounds: Option<&[(f64, f64)]>,
    ) -> Result<(f64, Vec<f64>)> {
        let z = Tensor::from_vec(1, z.len(), z.to_vec())?;
        let (dt, marks) = self.generate_batch(&z, h)?;
        let mut mark = marks.into_iter().next().unwrap_or_default();
        if let Some(bounds) = mark_bounds {
            for (m, (lo, hi)) in mark.iter_mut().zip(bounds) {
                *m = m.clamp(*lo, *hi);
            }
        }
        Ok((dt[0], mark))
    }

    /// Applies `g` to every row of `z: L x r` with a shared embedding `h`.
    /// Returns gaps and marks in data units.
    pub fn generate_batch(&self, z: &Tensor, h: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (dt_model, marks_model) = self.generate_batch_model(z, h)?;
        let dt = dt_model
            .iter()
            .map(|d| (d * self.standardization.gap_scale).max(self.arch.dt_floor))
            .collect();
        let marks = marks_model
            .iter()
            .map(|m| self.standardization.mark_from_model(m))
            .collect();
        Ok((dt, marks))
    }

    /// As [`CegModel::generate_batch`] but in model units.
    pub fn generate_batch_model(&self, z: &Tensor, h: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if h.len() != self.arch.hidden_dim || z.cols() != self.arch.noise_dim {
            return Err(Error::Shape {
                op: "generator_forward",
                left: (z.cols(), h.len()),
                right: (self.arch.noise_dim, self.arch.hidden_dim),
            });
        }
        if !z.is_finite() || h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite generator input".into()));
        }
        let n = z.rows();
        let mut g = Graph::new();
        let hn = g.constant(Tensor::row(h));
        let proj = self.history_projection(&mut g, hn)?;
        let proj = g.gather_rows(proj, vec![0; n])?;
        let zn = g.constant(z.clone());
        let (dt, marks) = self.generator_graph(&mut g, zn, proj)?;
        let dtv = g.value(dt).data().to_vec();
        let dm = self.arch.mark_dim;
        let marks = match marks {
            Some(m) => {
                let mv = g.value(m);
                (0..n).map(|i| mv.row_slice(i).to_vec()).collect()
            }
            None => vec![Vec::new(); n],
        };
        if dtv.iter().any(|v| !v.is_finite()) || marks.iter().flatten().any(|v: &f64| !v.is_finite()) {
            return Err(Error::Numeric("non-finite generator activations".into()));
        }
        debug_assert!(marks.iter().all(|m| m.len() == dm));
        Ok((dtv, marks))
    }

    /// Draws `L x r` latent noise for embedding `h` from the model's latent source.
    pub fn draw_latent(&self, h: &[f64], count: usize, rng: &mut Rng) -> Result<Tensor> {
        let r = self.arch.noise_dim;
        let eps: Vec<f64> = (0..count * r).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let eps = Tensor::from_vec(count, r, eps)?;
        match (self.latent, self.cvae()) {
            (LatentSource::PriorNet, Some(nets)) => {
                let (mu, logvar) = nets.prior_params(self, h)?;
                let mut z = eps;
                for row in 0..count {
                    for j in 0..r {
                        let v = &mut z.data_mut()[row * r + j];
                        *v = mu[j] + (0.5 * logvar[j]).exp() * *v;
                    }
                }
                Ok(z)
            }
            (LatentSource::PriorNet, None) => Err(Error::Format(
                "model requests prior-net latents but has no variational nets".into(),
            )),
            (LatentSource::StandardNormal, _) => Ok(eps),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        if !self.is_finite() {
            return Err(Error::Numeric("cannot serialize non-finite parameters".into()));
        }
        let doc = ModelDocOut {
            format: MODEL_FORMAT,
            arch: &self.arch,
            standardization: &self.standardization,
            latent: self.latent,
            cvae: self.layout.cvae.is_some(),
            params: self
                .params
                .iter()
                .map(|p| ParamOut {
                    name: &p.name,
                    shape: [p.value.rows(), p.value.cols()],
                    values: p.value.data(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocIn = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Format(format!("unknown model format '{}'", doc.format)));
        }
        doc.arch.validate()?;
        let (mut params, layout) = build_layout(&doc.arch, doc.cvae, &mut StreamKey::new(0).rng());
        if params.len() != doc.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter arrays, found {}",
                params.len(),
                doc.params.len()
            )));
        }
        for (i, p) in doc.params.into_iter().enumerate() {
            let id = ParamId(i);
            let expected = params.get(id).shape();
            if params.name(id) != p.name || expected != (p.shape[0], p.shape[1]) {
                return Err(Error::Format(format!(
                    "parameter {i}: expected {} {:?}, found {} {:?}",
                    params.name(id),
                    expected,
                    p.name,
                    p.shape
                )));
            }
            *params.get_mut(id) =
                Tensor::from_vec(p.shape[0], p.shape[1], p.values).map_err(|e| Error::Format(e.to_string()))?;
        }
        let model = CegModel {
            arch: doc.arch,
            standardization: doc.standardization,
            latent: doc.latent,
            params,
            layout,
        };
        if !model.is_finite() {
            return Err(Error::Format("non-finite parameter values".into()));
        }
        if model.latent == LatentSource::PriorNet && model.cvae().is_none() {
            return Err(Error::Format("prior-net latent without variational nets".into()));
        }
        Ok(model)
    }
}

impl CvaeNets {
    /// `(mu, log diag Sigma)` of `p(z | h)` for a single embedding.
    pub fn prior_params(&self, model: &CegModel, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let hn = g.constant(Tensor::row(h));
        let out = self.prior.forward(&mut g, &model.params, hn)?;
        Ok(split_gaussian(g.value(out).data()))
    }

    /// `(mu, log diag Sigma)` of `q(z | x, h)`; `x` is an event given as `(gap, mark)` in data units.
    pub fn encoder_params(&self, model: &CegModel, gap: f64, mark: &[f64], h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut row = model.standardization.encode_event(gap, mark);
        row.extend_from_slice(h);
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&row));
        let out = self.encoder.forward(&mut g, &model.params, x)?;
        Ok(split_gaussian(g.value(out).data()))
    }
}

fn split_gaussian(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r = v.len() / 2;
    (v[..r].to_vec(), v[r..].to_vec())
}

/// Reparametrized latent draw `z = mu + exp(logvar / 2) * eps`.
///
/// With `x = Some((gap, mark))` the encoder net supplies `(mu, logvar)`,
/// otherwise the prior net does.
pub fn reparam_sample(model: &CegModel, x: Option<(f64, &[f64])>, h: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    let nets = model
        .cvae()
        .ok_or_else(|| Error::InvalidArgument("model has no variational nets".into()))?;
    if eps.len() != model.arch.noise_dim {
        return Err(Error::Shape {
            op: "reparam_sample",
            left: (eps.len(), 1),
            right: (model.arch.noise_dim, 1),
        });
    }
    let (mu, logvar) = match x {
        Some((gap, mark)) => nets.encoder_params(model, gap, mark, h)?,
        None => nets.prior_params(model, h)?,
    };
    Ok(mu
        .iter()
        .zip(&logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

const MODEL_FORMAT: &str = "ceg-model/1";

#[derive(Serialize)]
struct ModelDocOut<'a> {
    format: &'static str,
    arch: &'a Architecture,
    standardization: &'a Standardization,
    latent: LatentSource,
    cvae: bool,
    params: Vec<ParamOut<'a>>,
}

#[derive(Serialize)]
struct ParamOut<'a> {
    name: &'a str,
    shape: [usize; 2],
    #[serde(serialize_with = "serialize_sig17")]
    values: &'a [f64],
}

fn serialize_sig17<S: serde::Serializer>(values: &&[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::{Error as _, SerializeSeq};
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values.iter() {
        let raw = serde_json::value::RawValue::from_string(fmt_f64(*v)).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

#[derive(Deserialize)]
struct ModelDocIn {
    format: String,
    arch: Architecture,
    standardization: Standardization,
    latent: LatentSource,
    cvae: bool,
    params: Vec<ParamIn>,
}

#[derive(Deserialize)]
struct ParamIn {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam descent step: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            left: (params.len(), 1),
            right: (grads.len(), 1),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.get(ParamId(i)).shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: params.get(ParamId(i)).shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter '{}'",
                params.name(ParamId(i))
            )));
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let p = params.get_mut(ParamId(i)).data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
