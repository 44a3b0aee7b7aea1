//! Parametric ground-truth processes: intensities, thinning, exact likelihoods
//! and ETAS maximum likelihood.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tensor};
use crate::data::{Dataset, Event, EventSequence};
use crate::error::{Error, Result};
use crate::nets::{adam_step, AdamConfig, AdamState};
use crate::rng::{tag, Rng, StreamKey};

/// Axis-aligned spatial domain `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialBox {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl SpatialBox {
    pub fn area(&self) -> f64 {
        (self.x[1] - self.x[0]) * (self.y[1] - self.y[0])
    }

    pub fn contains(&self, s: &[f64]) -> bool {
        s.len() == 2 && (self.x[0]..=self.x[1]).contains(&s[0]) && (self.y[0]..=self.y[1]).contains(&s[1])
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(self.x[0], self.x[1]), (self.y[0], self.y[1])]
    }
}

/// ETAS with a Gaussian diffusion kernel and constant drift `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasParams {
    /// background rate per unit area and time
    pub mu: f64,
    /// triggering mass
    pub c: f64,
    pub beta: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub a: [f64; 2],
    pub domain: SpatialBox,
}

impl EtasParams {
    /// Triggering kernel for an offspring displaced by `(dx, dy)` after `tau > 0`.
    pub fn kernel(&self, tau: f64, dx: f64, dy: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let ux = (dx - self.a[0]) / self.sigma_x;
        let uy = (dy - self.a[1]) / self.sigma_y;
        let norm = self.c / (2.0 * std::f64::consts::PI * self.sigma_x * self.sigma_y * tau);
        norm * (-self.beta * tau - 0.5 * (ux * ux + uy * uy) / tau).exp()
    }

    fn theta(&self) -> [f64; 7] {
        [
            self.mu.ln(),
            self.c.ln(),
            self.beta.ln(),
            self.sigma_x.ln(),
            self.sigma_y.ln(),
            self.a[0],
            self.a[1],
        ]
    }

    fn from_theta(theta: &[f64], domain: SpatialBox) -> Self {
        EtasParams {
            mu: theta[0].exp(),
            c: theta[1].exp(),
            beta: theta[2].exp(),
            sigma_x: theta[3].exp(),
            sigma_y: theta[4].exp(),
            a: [theta[5], theta[6]],
            domain,
        }
    }
}

/// A ground-truth temporal or spatio-temporal point process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ClassicalModel {
    /// Homogeneous Poisson process with constant intensity `rate`.
    Poisson {
        rate: f64,
    },
    /// `mu + sum beta exp(-beta (t - t_i))`
    SelfExciting {
        mu: f64,
        beta: f64,
    },
    /// `exp(mu t - alpha N(t))`
    SelfCorrecting {
        mu: f64,
        alpha: f64,
    },
    Etas(EtasParams),
}

/// The `λ̄` handed to thinning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityBound {
    /// Model-specific bound recomputed as the simulation advances.
    Adaptive,
    Constant(f64),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl ClassicalModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClassicalModel::Poisson { rate } => positive("rate", rate),
            ClassicalModel::SelfExciting { mu, beta } => {
                positive("mu", mu)?;
                positive("beta", beta)
            }
            ClassicalModel::SelfCorrecting { mu, alpha } => {
                positive("mu", mu)?;
                positive("alpha", alpha)
            }
            ClassicalModel::Etas(p) => {
                positive("mu", p.mu)?;
                positive("C", p.c)?;
                positive("beta", p.beta)?;
                positive("sigma_x", p.sigma_x)?;
                positive("sigma_y", p.sigma_y)?;
                if !(p.a[0].is_finite() && p.a[1].is_finite()) {
                    return Err(Error::InvalidArgument("drift must be finite".into()));
                }
                let d = p.domain;
                if !(d.x[1] > d.x[0] && d.y[1] > d.y[0] && d.area().is_finite()) {
                    return Err(Error::InvalidArgument("ETAS domain box is degenerate".into()));
                }
                Ok(())
            }
        }
    }

    pub fn mark_dim(&self) -> usize {
        match self {
            ClassicalModel::Etas(_) => 2,
            _ => 0,
        }
    }

    /// Volume of the mark space (1 for unmarked processes).
    pub fn mark_volume(&self) -> f64 {
        match self {
            ClassicalModel::Etas(p) => p.domain.area(),
            _ => 1.0,
        }
    }

    fn check_query(&self, t: f64, mark: &[f64], history: &[Event]) -> Result<()> {
        if let Some(last) = history.last() {
            if t < last.time {
                return Err(Error::InvalidArgument(format!(
                    "query time {t} precedes last history event at {}",
                    last.time
                )));
            }
        }
        if self.mark_dim() > 0 && mark.len() != self.mark_dim() {
            return Err(Error::InvalidArgument(format!(
                "expected a {}-dimensional mark, got {}",
                self.mark_dim(),
                mark.len()
            )));
        }
        Ok(())
    }

    /// `λ(t[, mark] | history)` by direct summation. Events at exactly `t` are
    /// included (right-continuous intensity).
    pub fn intensity(&self, t: f64, mark: &[f64], history: &[Event]) -> Result<f64> {
        self.check_query(t, mark, history)?;
        Ok(self.intensity_unchecked(t, mark, history))
    }

    fn intensity_unchecked(&self, t: f64, mark: &[f64], history: &[Event]) -> f64 {
        match *self {
            ClassicalModel::Poisson { rate } => rate,
            ClassicalModel::SelfExciting { mu, beta } => {
                mu + beta * history.iter().map(|e| (-beta * (t - e.time)).exp()).sum::<f64>()
            }
            ClassicalModel::SelfCorrecting { mu, alpha } => (mu * t - alpha * history.len() as f64).exp(),
            ClassicalModel::Etas(p) => {
                p.mu + history
                    .iter()
                    .map(|e| p.kernel(t - e.time, mark[0] - e.mark[0], mark[1] - e.mark[1]))
                    .sum::<f64>()
            }
        }
    }

    /// Ground intensity `∫ λ(t, s) ds` (the ETAS spatial integral is untruncated).
    pub fn ground_intensity(&self, t: f64, history: &[Event]) -> f64 {
        match *self {
            ClassicalModel::Etas(p) => {
                p.mu * p.domain.area()
                    + p.c
                        * history
                            .iter()
                            .filter(|e| e.time < t)
                            .map(|e| (-p.beta * (t - e.time)).exp())
                            .sum::<f64>()
            }
            _ => self.intensity_unchecked(t, &[], history),
        }
    }

    /// `∫_{from}^{to} λ_g(u | history) du`; events of `history` after `from` switch on
    /// at their own times, later ones are ignored. Self-correcting assumes none after `from`.
    pub fn compensator(&self, history: &[Event], from: f64, to: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        match *self {
            ClassicalModel::Poisson { rate } => rate * (to - from),
            ClassicalModel::SelfExciting { mu, beta } => {
                mu * (to - from)
                    + history
                        .iter()
                        .filter(|e| e.time < to)
                        .map(|e| {
                            let start = from.max(e.time);
                            (-beta * (start - e.time)).exp() - (-beta * (to - e.time)).exp()
                        })
                        .sum::<f64>()
            }
            ClassicalModel::SelfCorrecting { mu, alpha } => {
                let n = history.len() as f64;
                // e^{-alpha n} (e^{mu to} - e^{mu from}) / mu, written to avoid overflow
                (mu * from - alpha * n).exp() * (mu * (to - from)).exp_m1() / mu
            }
            ClassicalModel::Etas(p) => {
                p.mu * p.domain.area() * (to - from)
                    + p.c / p.beta
                        * history
                            .iter()
                            .filter(|e| e.time < to)
                            .map(|e| {
                                let start = from.max(e.time);
                                (-p.beta * (start - e.time)).exp() - (-p.beta * (to - e.time)).exp()
                            })
                            .sum::<f64>()
            }
        }
    }

    /// Exact log-likelihood `Σ log λ(x_i | H) − ∫_0^T λ`.
    pub fn exact_loglik(&self, seq: &EventSequence) -> Result<f64> {
        if self.mark_dim() > 0 && seq.events.iter().any(|e| e.mark.len() != self.mark_dim()) {
            return Err(Error::InvalidArgument("mark dimension does not match model".into()));
        }
        let ev = &seq.events;
        let mut ll = 0.0;
        match *self {
            ClassicalModel::SelfExciting { mu, beta } => {
                // recursive form of the excitation sum
                let mut s = 0.0;
                for i in 0..ev.len() {
                    if i > 0 {
                        s = (-beta * (ev[i].time - ev[i - 1].time)).exp() * (1.0 + s);
                    }
                    ll += (mu + beta * s).ln();
                }
            }
            _ => {
                for i in 0..ev.len() {
                    ll += self.intensity_unchecked(ev[i].time, &ev[i].mark, &ev[..i]).ln();
                }
            }
        }
        ll -= self.total_compensator(seq);
        Ok(ll)
    }

    /// `∫_0^T λ_g(u) du` over the whole sequence.
    pub fn total_compensator(&self, seq: &EventSequence) -> f64 {
        let t_end = seq.horizon;
        match *self {
            ClassicalModel::SelfCorrecting { .. } => {
                let mut prev = 0.0;
                let mut total = 0.0;
                for i in 0..seq.len() {
                    total += self.compensator(&seq.events[..i], prev, seq.events[i].time);
                    prev = seq.events[i].time;
                }
                total + self.compensator(&seq.events, prev, t_end)
            }
            _ => self.compensator(&seq.events, 0.0, t_end),
        }
    }

    /// Time-rescaling residuals `∫_{t_{i-1}}^{t_i} λ_g`, unit exponential under the model.
    pub fn time_rescaling_residuals(&self, seq: &EventSequence) -> Vec<f64> {
        let mut prev = 0.0;
        (0..seq.len())
            .map(|i| {
                let t = seq.events[i].time;
                let r = self.compensator(&seq.events[..i], prev, t);
                prev = t;
                r
            })
            .collect()
    }

    /// Conditional density of the next event at `(t, mark)` given `history`.
    ///
    /// For ETAS this is a density over time and space.
    pub fn cond_pdf(&self, t: f64, mark: &[f64], history: &[Event]) -> Result<f64> {
        self.check_query(t, mark, history)?;
        let tn = history.last().map_or(0.0, |e| e.time);
        let lam = if self.mark_dim() > 0 {
            self.intensity_unchecked(t, mark, history)
        } else {
            self.ground_intensity(t, history)
        };
        Ok(lam * (-self.compensator(history, tn, t)).exp())
    }

    /// Probability that the next event occurs before `t`.
    pub fn cond_cdf(&self, t: f64, history: &[Event]) -> Result<f64> {
        let tn = history.last().map_or(0.0, |e| e.time);
        if t < tn {
            return Err(Error::InvalidArgument(format!(
                "query time {t} precedes last history event at {tn}"
            )));
        }
        let tn = history.last().map_or(0.0, |e| e.time);
        Ok(-(-self.compensator(history, tn, t)).exp_m1())
    }

    /// Returns `(λ̄, valid_until)` for the adaptive bound at time `t`.
    fn adaptive_bound(&self, t: f64, history: &[Event]) -> Result<(f64, f64)> {
        match *self {
            ClassicalModel::Poisson { rate } => Ok((rate, f64::INFINITY)),
            ClassicalModel::SelfExciting { beta, .. } => {
                // intensity only decays until the next acceptance
                Ok((
                    self.ground_intensity_at_or_after(t, history) + 10.0 * beta,
                    f64::INFINITY,
                ))
            }
            ClassicalModel::SelfCorrecting { mu, alpha } => {
                let window = 1.0 / mu;
                let end = t + window;
                Ok(((mu * end - alpha * history.len() as f64).exp(), end))
            }
            ClassicalModel::Etas(_) => Err(Error::InvalidArgument(
                "ETAS thinning needs an explicit intensity bound".into(),
            )),
        }
    }

    fn ground_intensity_at_or_after(&self, t: f64, history: &[Event]) -> f64 {
        self.intensity_unchecked(t, &[], history)
    }

    /// Thinning simulation on `[0, horizon)`.
    ///
    /// Candidate times arrive at rate `λ̄ · |M|` with marks uniform on `M`;
    /// each is kept when `D λ̄ ≤ λ(t, m)` for `D ~ U(0, 1)`. Without marks
    /// `|M| = 1`. A candidate whose intensity exceeds `λ̄` is an error.
    pub fn thinning_simulate(&self, horizon: f64, bound: IntensityBound, rng: &mut Rng) -> Result<EventSequence> {
        self.validate()?;
        positive("horizon", horizon)?;
        if let IntensityBound::Constant(b) = bound {
            positive("intensity bound", b)?;
        }
        let volume = self.mark_volume();
        let domain = match self {
            ClassicalModel::Etas(p) => Some(p.domain),
            _ => None,
        };
        let mut events: Vec<Event> = Vec::new();
        let mut t = 0.0;
        let (mut lam_bar, mut valid_until) = match bound {
            IntensityBound::Constant(b) => (b, f64::INFINITY),
            IntensityBound::Adaptive => self.adaptive_bound(0.0, &events)?,
        };
        loop {
            let u: f64 = rng.random();
            let cand = t - (1.0 - u).ln() / (lam_bar * volume);
            if cand > valid_until {
                // memoryless restart with a fresh bound
                t = valid_until;
                (lam_bar, valid_until) = self.adaptive_bound(t, &events)?;
                continue;
            }
            t = cand;
            if t >= horizon {
                break;
            }
            let mark = match domain {
                Some(d) => vec![rng.random_range(d.x[0]..d.x[1]), rng.random_range(d.y[0]..d.y[1])],
                None => Vec::new(),
            };
            let d: f64 = rng.random();
            let lam = self.intensity_unchecked(t, &mark, &events);
            if !lam.is_finite() {
                return Err(Error::Numeric(format!("non-finite intensity at t={t}")));
            }
            if lam > lam_bar {
                return Err(Error::BoundViolated {
                    t,
                    intensity: lam,
                    bound: lam_bar,
                });
            }
            if d * lam_bar <= lam {
                events.push(Event::new(t, mark));
                if bound == IntensityBound::Adaptive {
                    (lam_bar, valid_until) = self.adaptive_bound(t, &events)?;
                }
            }
        }
        Ok(EventSequence::new(events, horizon))
    }

    /// Simulates `n` sequences in parallel, sequence `i` from its own stream.
    ///
    /// With `retries > 0`, a sequence that hits a bound violation is redrawn
    /// from a fresh derived stream up to `retries` times.
    pub fn simulate_dataset(
        &self,
        n: usize,
        horizon: f64,
        bound: IntensityBound,
        seed: u64,
        retries: usize,
    ) -> Result<Dataset> {
        let base = StreamKey::new(seed).derive(tag::SIMULATE);
        let seqs: Vec<Result<EventSequence>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let key = base.derive(i as u64);
                let mut attempt = 0usize;
                loop {
                    let k = if attempt == 0 { key } else { key.derive(attempt as u64) };
                    match self.thinning_simulate(horizon, bound, &mut k.rng()) {
                        Err(Error::BoundViolated { .. }) if attempt < retries => attempt += 1,
                        other => return other,
                    }
                }
            })
            .collect();
        let seqs = seqs.into_iter().collect::<Result<Vec<_>>>()?;
        let ds = Dataset::new(seqs, self.mark_dim())?;
        match self {
            ClassicalModel::Etas(p) => ds.with_mark_bounds(p.domain.bounds()),
            _ => Ok(ds),
        }
    }
}

/// Optimizer settings for [`fit_etas`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasFitConfig {
    pub lr: f64,
    pub steps: usize,
    pub checkpoint_every: usize,
}

impl Default for EtasFitConfig {
    fn default() -> Self {
        EtasFitConfig {
            lr: 1e-2,
            steps: 500,
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtasFit {
    pub params: EtasParams,
    /// `(step, total log-likelihood)` at every checkpoint, including the start and end
    pub checkpoints: Vec<(usize, f64)>,
}

/// Total ETAS log-likelihood over `data` and its gradient with respect to
/// `(log mu, log C, log beta, log sigma_x, log sigma_y, a_x, a_y)`.
pub fn etas_loglik_grad(p: &EtasParams, data: &Dataset) -> Result<(f64, [f64; 7])> {
    if data.mark_dim != 2 {
        return Err(Error::InvalidArgument("ETAS needs 2-dimensional marks".into()));
    }
    let parts: Vec<(f64, [f64; 7])> = data
        .sequences
        .par_iter()
        .map(|seq| etas_seq_loglik_grad(p, seq))
        .collect();
    let mut ll = 0.0;
    let mut grad = [0.0; 7];
    for (l, g) in parts {
        ll += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite ETAS likelihood".into()));
    }
    Ok((ll, grad))
}

fn etas_seq_loglik_grad(p: &EtasParams, seq: &EventSequence) -> (f64, [f64; 7]) {
    let ev = &seq.events;
    let (sx2, sy2) = (p.sigma_x * p.sigma_x, p.sigma_y * p.sigma_y);
    let mut ll = 0.0;
    let mut g = [0.0; 7];
    for i in 0..ev.len() {
        let mut lam = p.mu;
        let mut dl = [p.mu, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for e in &ev[..i] {
            let tau = ev[i].time - e.time;
            let ex = ev[i].mark[0] - e.mark[0] - p.a[0];
            let ey = ev[i].mark[1] - e.mark[1] - p.a[1];
            let k = p.kernel(tau, ev[i].mark[0] - e.mark[0], ev[i].mark[1] - e.mark[1]);
            lam += k;
            dl[1] += k;
            dl[2] -= p.beta * tau * k;
            dl[3] += k * (ex * ex / (sx2 * tau) - 1.0);
            dl[4] += k * (ey * ey / (sy2 * tau) - 1.0);
            dl[5] += k * ex / (sx2 * tau);
            dl[6] += k * ey / (sy2 * tau);
        }
        ll += lam.ln();
        for (a, b) in g.iter_mut().zip(dl) {
            *a += b / lam;
        }
    }
    let t_end = seq.horizon;
    let bg = p.mu * p.domain.area() * t_end;
    let mut decay_sum = 0.0;
    let mut weighted = 0.0;
    for e in ev {
        let s = t_end - e.time;
        let d = (-p.beta * s).exp();
        decay_sum += 1.0 - d;
        weighted += s * d;
    }
    let trig = p.c / p.beta * decay_sum;
    ll -= bg + trig;
    g[0] -= bg;
    g[1] -= trig;
    g[2] -= -trig + p.c * weighted;
    (ll, g)
}

/// Maximum-likelihood ETAS fit by Adam ascent on log-parameters.
///
/// A step that lowers the log-likelihood is undone and the learning rate
/// halved, so the recorded log-likelihood never decreases.
pub fn fit_etas(data: &Dataset, init: EtasParams, cfg: EtasFitConfig) -> Result<EtasFit> {
    ClassicalModel::Etas(init).validate()?;
    let n_events = data.total_events().max(1) as f64;
    let mut ps = ParamSet::new();
    let id = ps.push("etas.theta", Tensor::row(&init.theta()));
    let mut adam = AdamState::new(
        &ps,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let (mut ll, mut grad) = etas_loglik_grad(&init, data)?;
    let mut checkpoints = vec![(0, ll)];
    for step in 1..=cfg.steps {
        let (saved, saved_adam) = (ps.clone(), adam.clone());
        let descent: Vec<f64> = grad.iter().map(|g| -g / n_events).collect();
        adam_step(&mut ps, &[Tensor::row(&descent)], &mut adam)?;
        let trial = EtasParams::from_theta(ps.get(id).data(), init.domain);
        let (ll_new, grad_new) = etas_loglik_grad(&trial, data)?;
        if ll_new >= ll {
            (ll, grad) = (ll_new, grad_new);
        } else {
            ps = saved;
            adam = saved_adam;
            adam.config.lr *= 0.5;
        }
        if step == cfg.steps || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            checkpoints.push((step, ll));
        }
    }
    Ok(EtasFit {
        params: EtasParams::from_theta(ps.get(id).data(), init.domain),
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::adaptive_simpson;

    const SE: ClassicalModel = ClassicalModel::SelfExciting { mu: 0.1, beta: 0.1 };
    const SC: ClassicalModel = ClassicalModel::SelfCorrecting { mu: 1.0, alpha: 1.0 };

    fn etas() -> EtasParams {
        EtasParams {
            mu: 0.02,
            c: 0.5,
            beta: 1.0,
            sigma_x: 0.5,
            sigma_y: 0.7,
            a: [0.1, -0.2],
            domain: SpatialBox {
                x: [0.0, 10.0],
                y: [0.0, 10.0],
            },
        }
    }

    #[test]
    fn intensity_examples() {
        assert_eq!(SE.intensity(5.0, &[], &[]).unwrap(), 0.1);
        let v = SE.intensity(2.0, &[], &[Event::time_only(1.0)]).unwrap();
        assert!((v - 0.190_483_741_803_596).abs() < 1e-12);
        assert_eq!(SC.intensity(0.0, &[], &[]).unwrap(), 1.0);
        assert!(SE.intensity(0.5, &[], &[Event::time_only(1.0)]).is_err());
    }

    #[test]
    fn loglik_examples() {
        let seq = EventSequence::new(vec![Event::time_only(1.0)], 2.0);
        let ll = SE.exact_loglik(&seq).unwrap();
        let closed = 0.1f64.ln() - (0.2 + (1.0 - (-0.1f64).exp()));
        assert!((ll - closed).abs() < 1e-14, "{ll}");
        assert!((ll + 2.597_748_3).abs() < 1e-6);
        let empty = EventSequence::new(vec![], 3.0);
        assert!((SE.exact_loglik(&empty).unwrap() + 0.3).abs() < 1e-15);
        let empty = EventSequence::new(vec![], 1.0);
        let v = SC.exact_loglik(&empty).unwrap();
        assert!((v + (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn etas_kernel_integrates_to_c_exp() {
        let p = etas();
        let tau = 0.8;
        let mut outer = |x: f64| adaptive_simpson(&mut |y: f64| p.kernel(tau, x, y), -15.0, 15.0, 1e-12);
        let total = adaptive_simpson(&mut outer, -15.0, 15.0, 1e-10);
        assert!((total - p.c * (-p.beta * tau).exp()).abs() < 1e-8);
    }

    #[test]
    fn compensator_matches_quadrature() {
        let hist = vec![Event::time_only(0.5), Event::time_only(1.2)];
        for m in [SE, SC, ClassicalModel::Poisson { rate: 2.0 }] {
            let q = adaptive_simpson(&mut |u| m.ground_intensity(u, &hist), 1.2, 3.7, 1e-13);
            assert!((m.compensator(&hist, 1.2, 3.7) - q).abs() < 1e-9 * q.max(1.0));
        }
    }

    #[test]
    fn cond_pdf_poisson_and_boundary() {
        let m = ClassicalModel::Poisson { rate: 1.5 };
        let hist = [Event::time_only(1.0)];
        let f = m.cond_pdf(2.0, &[], &hist).unwrap();
        assert!((f - 1.5 * (-1.5f64).exp()).abs() < 1e-15);
        let f0 = SE.cond_pdf(1.0, &[], &hist).unwrap();
        assert_eq!(f0, SE.intensity(1.0, &[], &hist).unwrap());
        assert!(SE.cond_pdf(0.5, &[], &hist).is_err());
        let total = crate::stats::integrate_to_infinity(&mut |t| SE.cond_pdf(t, &[], &hist).unwrap(), 1.0, 1e-10);
        assert!((0.999..1.0 + 1e-6).contains(&total), "{total}");
    }

    #[test]
    fn constant_bound_accepts_everything() {
        let m = ClassicalModel::Poisson { rate: 3.0 };
        let mut a = StreamKey::new(4).rng();
        let s = m
            .thinning_simulate(10.0, IntensityBound::Constant(3.0), &mut a)
            .unwrap();
        // replay: every candidate gap is an exponential draw followed by the D draw
        let mut b = StreamKey::new(4).rng();
        let mut t = 0.0;
        for e in &s.events {
            let u: f64 = b.random();
            t -= (1.0 - u).ln() / 3.0;
            let _: f64 = b.random();
            assert_eq!(e.time, t);
        }
    }

    #[test]
    fn thinning_is_deterministic_and_valid() {
        for m in [SE, SC] {
            let a = m
                .thinning_simulate(50.0, IntensityBound::Adaptive, &mut StreamKey::new(1).rng())
                .unwrap();
            let b = m
                .thinning_simulate(50.0, IntensityBound::Adaptive, &mut StreamKey::new(1).rng())
                .unwrap();
            assert_eq!(a, b);
            assert!(crate::data::validate_sequence(&a, 0).is_empty());
        }
    }

    #[test]
    fn too_small_bound_is_reported() {
        let err = SE
            .thinning_simulate(100.0, IntensityBound::Constant(0.05), &mut StreamKey::new(2).rng())
            .unwrap_err();
        assert!(err.to_string().starts_with("upper bound violated at t="));
        let e = ClassicalModel::Etas(etas());
        assert!(e
            .thinning_simulate(1.0, IntensityBound::Adaptive, &mut StreamKey::new(2).rng())
            .is_err());
    }

    #[test]
    fn etas_gradient_matches_finite_differences() {
        let p = etas();
        let ds = ClassicalModel::Etas(p)
            .simulate_dataset(4, 20.0, IntensityBound::Constant(5.0), 3, 20)
            .unwrap();
        let (_, grad) = etas_loglik_grad(&p, &ds).unwrap();
        let theta = p.theta();
        for j in 0..7 {
            let h = 1e-6;
            let mut tp = theta;
            tp[j] += h;
            let mut tm = theta;
            tm[j] -= h;
            let lp = etas_loglik_grad(&EtasParams::from_theta(&tp, p.domain), &ds).unwrap().0;
            let lm = etas_loglik_grad(&EtasParams::from_theta(&tm, p.domain), &ds).unwrap().0;
            let num = (lp - lm) / (2.0 * h);
            assert!(
                (num - grad[j]).abs() <= 1e-5 * num.abs().max(1.0),
                "{j}: {num} vs {}",
                grad[j]
            );
        }
        let direct: f64 = ds
            .sequences
            .iter()
            .map(|s| ClassicalModel::Etas(p).exact_loglik(s).unwrap())
            .sum();
        let (ll, _) = etas_loglik_grad(&p, &ds).unwrap();
        assert!((ll - direct).abs() < 1e-9 * direct.abs());
    }

    #[test]
    fn serde_tagging() {
        let s = serde_json::to_string(&SE).unwrap();
        assert_eq!(s, r#"{"model":"self_exciting","mu":0.1,"beta":0.1}"#);
        let back: ClassicalModel =
            serde_json::from_str(&serde_json::to_string(&ClassicalModel::Etas(etas())).unwrap()).unwrap();
        assert_eq!(back, ClassicalModel::Etas(etas()));
    }
}
