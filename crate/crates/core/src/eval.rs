//! Metrics against a known ground truth: per-event test log-likelihood and
//! mean relative error of the conditional density and intensity on a grid.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ceg::{draw_from_embedding, intensity_from_cloud};
use crate::classical::ClassicalModel;
use crate::data::{Dataset, Event, EventSequence};
use crate::error::{Error, Result};
use crate::kde::{KdeConfig, SampleCloud};
use crate::nets::{CegModel, LstmState};
use crate::rng::{tag, Rng, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// `L` samples per conditional query
    pub sample_count: usize,
    /// interior grid points per inter-event window
    pub grid_points: usize,
    pub kde: KdeConfig,
    pub seed: u64,
    /// grid points whose true density is below this are skipped
    pub truth_floor: f64,
    /// floor applied to estimated densities before taking logs
    pub pdf_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sample_count: 1000,
            grid_points: 20,
            kde: KdeConfig::default(),
            seed: 0,
            truth_floor: 1e-8,
            pdf_floor: 1e-12,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < 2 {
            return Err(Error::InvalidArgument(
                "evaluation needs at least 2 samples per query".into(),
            ));
        }
        if self.grid_points == 0 {
            return Err(Error::InvalidArgument("grid_points must be at least 1".into()));
        }
        if !(self.truth_floor >= 0.0 && self.pdf_floor > 0.0) {
            return Err(Error::InvalidArgument(
                "floors must be non-negative (pdf_floor positive)".into(),
            ));
        }
        self.kde.validate()
    }

    pub fn grid_spec(&self) -> String {
        format!(
            "{} uniformly spaced interior points per window (t_(i-1), t_i), t_0 = 0, conditioned on events before i; \
             points with true f < {:e} skipped; marked models evaluated at the observed mark; \
             L = {} samples per window; test_ll is per event (total over events / event count)",
            self.grid_points, self.truth_floor, self.sample_count
        )
    }
}

/// Summary metrics of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_ll_per_event: f64,
    /// the same quantity under the ground-truth model, for reference
    pub truth_ll_per_event: f64,
    pub mre_f: f64,
    pub mre_lambda: f64,
    pub n_events: usize,
    pub n_grid_points: usize,
    /// grid points where the estimated survival fell below the intensity clamp
    pub n_clamped: usize,
    pub grid_spec: String,
}

/// One grid point of the plot data.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub seq_id: usize,
    pub t: f64,
    pub f_true: f64,
    pub f_est: f64,
    pub lambda_true: f64,
    pub lambda_est: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub rows: Vec<GridRow>,
}

/// Density and intensity of the next event, as functions of the gap since
/// the last event and the mark.
pub trait NextEventDensity {
    fn pdf(&self, dt: f64, mark: &[f64]) -> Result<f64>;
    /// Intensity and whether it hit a numerical clamp.
    fn intensity(&self, dt: f64, mark: &[f64]) -> Result<(f64, bool)>;
}

/// Anything that yields the conditional law of each event of a sequence.
pub trait ConditionalEstimator: Sync {
    fn mark_dim(&self) -> usize;

    /// Entry `i` is the law of event `i` given events `0..i`.
    fn conditionals<'a>(&'a self, seq: &'a EventSequence, rng: &mut Rng)
        -> Result<Vec<Box<dyn NextEventDensity + 'a>>>;
}

impl NextEventDensity for SampleCloud {
    fn pdf(&self, dt: f64, mark: &[f64]) -> Result<f64> {
        SampleCloud::pdf(self, dt, mark)
    }

    fn intensity(&self, dt: f64, mark: &[f64]) -> Result<(f64, bool)> {
        let v = intensity_from_cloud(self, dt, mark)?;
        Ok((v.value, v.clamped))
    }
}

/// A CEG model queried through KDE clouds of `sample_count` draws.
pub struct CegEstimator<'m> {
    pub model: &'m CegModel,
    pub sample_count: usize,
    pub kde: KdeConfig,
}

impl ConditionalEstimator for CegEstimator<'_> {
    fn mark_dim(&self) -> usize {
        self.model.arch.mark_dim
    }

    fn conditionals<'a>(
        &'a self,
        seq: &'a EventSequence,
        rng: &mut Rng,
    ) -> Result<Vec<Box<dyn NextEventDensity + 'a>>> {
        let dim = self.model.arch.event_width();
        let mut state = LstmState::zeros(self.model.arch.hidden_dim);
        let mut out: Vec<Box<dyn NextEventDensity + 'a>> = Vec::with_capacity(seq.len());
        for i in 0..seq.len() {
            let pts = draw_from_embedding(self.model, &state.h, self.sample_count, rng)?;
            out.push(Box::new(SampleCloud::from_samples(pts, dim, &self.kde)?));
            state = self.model.lstm_step(seq.gap(i), &seq.events[i].mark, &state)?;
        }
        Ok(out)
    }
}

struct ClassicalConditional<'a> {
    model: &'a ClassicalModel,
    history: &'a [Event],
    tn: f64,
}

impl NextEventDensity for ClassicalConditional<'_> {
    fn pdf(&self, dt: f64, mark: &[f64]) -> Result<f64> {
        self.model.cond_pdf(self.tn + dt, mark, self.history)
    }

    fn intensity(&self, dt: f64, mark: &[f64]) -> Result<(f64, bool)> {
        Ok((self.model.intensity(self.tn + dt, mark, self.history)?, false))
    }
}

impl ConditionalEstimator for ClassicalModel {
    fn mark_dim(&self) -> usize {
        ClassicalModel::mark_dim(self)
    }

    fn conditionals<'a>(
        &'a self,
        seq: &'a EventSequence,
        _rng: &mut Rng,
    ) -> Result<Vec<Box<dyn NextEventDensity + 'a>>> {
        Ok((0..seq.len())
            .map(|i| {
                let history = &seq.events[..i];
                Box::new(ClassicalConditional {
                    model: self,
                    history,
                    tn: history.last().map_or(0.0, |e| e.time),
                }) as Box<dyn NextEventDensity + 'a>
            })
            .collect())
    }
}

/// `mean_i |est_i − truth_i| / truth_i`.
pub fn mre(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape {
            op: "mre",
            left: (estimate.len(), 1),
            right: (truth.len(), 1),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("mre of an empty grid".into()));
    }
    if let Some(i) = truth.iter().position(|&t| t.is_nan() || t <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truth value {} at grid point {i} is not positive",
            truth[i]
        )));
    }
    Ok(estimate.iter().zip(truth).map(|(e, t)| (e - t).abs() / t).sum::<f64>() / truth.len() as f64)
}

/// Per-event log-likelihood of `test` under `est`, with densities floored at `pdf_floor`.
pub fn test_loglik_with(est: &dyn ConditionalEstimator, test: &Dataset, seed: u64, pdf_floor: f64) -> Result<f64> {
    nonempty(test)?;
    let key = StreamKey::new(seed).derive(tag::EVAL);
    let parts = test
        .sequences
        .par_iter()
        .enumerate()
        .map(|(s, seq)| {
            let conds = est.conditionals(seq, &mut key.derive(s as u64).rng())?;
            sequence_ll(&conds, seq, pdf_floor)
        })
        .collect::<Vec<Result<f64>>>();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / test.total_events() as f64)
}

/// Per-event log-likelihood of `test` under the CEG model with `l` samples per event.
pub fn test_loglik(model: &CegModel, test: &Dataset, l: usize, kde: &KdeConfig, seed: u64) -> Result<f64> {
    let est = CegEstimator {
        model,
        sample_count: l,
        kde: *kde,
    };
    test_loglik_with(&est, test, seed, EvalConfig::default().pdf_floor)
}

fn nonempty(test: &Dataset) -> Result<()> {
    if test.total_events() == 0 {
        return Err(Error::InvalidArgument("test set has no events".into()));
    }
    Ok(())
}

fn sequence_ll(conds: &[Box<dyn NextEventDensity + '_>], seq: &EventSequence, floor: f64) -> Result<f64> {
    let mut ll = 0.0;
    for (i, c) in conds.iter().enumerate() {
        ll += c.pdf(seq.gap(i), &seq.events[i].mark)?.max(floor).ln();
    }
    Ok(ll)
}

struct SeqEval {
    ll: f64,
    truth_ll: f64,
    rows: Vec<GridRow>,
    clamped: usize,
}

/// Compares `est` with the ground truth on every window of every test sequence.
pub fn evaluate_with(
    est: &dyn ConditionalEstimator,
    truth: &ClassicalModel,
    test: &Dataset,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    nonempty(test)?;
    if est.mark_dim() != test.mark_dim || truth.mark_dim() != test.mark_dim {
        return Err(Error::InvalidArgument(format!(
            "mark dimensions differ: estimator {}, truth {}, data {}",
            est.mark_dim(),
            truth.mark_dim(),
            test.mark_dim
        )));
    }
    let key = StreamKey::new(cfg.seed).derive(tag::EVAL);
    let parts: Vec<Result<SeqEval>> = test
        .sequences
        .par_iter()
        .enumerate()
        .map(|(s, seq)| evaluate_sequence(est, truth, s, seq, cfg, key.derive(s as u64)))
        .collect();
    let (mut ll, mut truth_ll, mut clamped) = (0.0, 0.0, 0usize);
    let mut rows = Vec::new();
    for p in parts {
        let p = p?;
        ll += p.ll;
        truth_ll += p.truth_ll;
        clamped += p.clamped;
        rows.extend(p.rows);
    }
    let f_est: Vec<f64> = rows.iter().map(|r| r.f_est).collect();
    let f_true: Vec<f64> = rows.iter().map(|r| r.f_true).collect();
    let l_est: Vec<f64> = rows.iter().map(|r| r.lambda_est).collect();
    let l_true: Vec<f64> = rows.iter().map(|r| r.lambda_true).collect();
    let n = test.total_events();
    let report = EvalReport {
        test_ll_per_event: ll / n as f64,
        truth_ll_per_event: truth_ll / n as f64,
        mre_f: mre(&f_est, &f_true)?,
        mre_lambda: mre(&l_est, &l_true)?,
        n_events: n,
        n_grid_points: rows.len(),
        n_clamped: clamped,
        grid_spec: cfg.grid_spec(),
    };
    if !(report.mre_f.is_finite() && report.mre_lambda.is_finite() && report.test_ll_per_event.is_finite()) {
        return Err(Error::Numeric("evaluation produced non-finite metrics".into()));
    }
    Ok(Evaluation { report, rows })
}

fn evaluate_sequence(
    est: &dyn ConditionalEstimator,
    truth: &ClassicalModel,
    s: usize,
    seq: &EventSequence,
    cfg: &EvalConfig,
    key: StreamKey,
) -> Result<SeqEval> {
    let conds = est.conditionals(seq, &mut key.rng())?;
    let ll = sequence_ll(&conds, seq, cfg.pdf_floor)?;
    let mut truth_ll = 0.0;
    let mut rows = Vec::new();
    let mut clamped = 0;
    let g = cfg.grid_points;
    for (i, c) in conds.iter().enumerate() {
        let history = &seq.events[..i];
        let mark = &seq.events[i].mark;
        let tn = history.last().map_or(0.0, |e| e.time);
        let gap = seq.gap(i);
        truth_ll += truth.cond_pdf(seq.events[i].time, mark, history)?.ln();
        for j in 1..=g {
            let dt = gap * j as f64 / (g + 1) as f64;
            let t = tn + dt;
            let f_true = truth.cond_pdf(t, mark, history)?;
            if f_true.is_nan() || f_true < cfg.truth_floor || f_true == 0.0 {
                continue;
            }
            let (lambda_est, hit) = c.intensity(dt, mark)?;
            clamped += usize::from(hit);
            rows.push(GridRow {
                seq_id: s,
                t,
                f_true,
                f_est: c.pdf(dt, mark)?,
                lambda_true: truth.intensity(t, mark, history)?,
                lambda_est,
            });
        }
    }
    Ok(SeqEval {
        ll,
        truth_ll,
        rows,
        clamped,
    })
}

/// [`evaluate_with`] for a CEG model using `cfg.sample_count` samples per window.
pub fn evaluate(model: &CegModel, truth: &ClassicalModel, test: &Dataset, cfg: &EvalConfig) -> Result<Evaluation> {
    let est = CegEstimator {
        model,
        sample_count: cfg.sample_count,
        kde: cfg.kde,
    };
    evaluate_with(&est, truth, test, cfg)
}

pub fn plot_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("seq_id,t,f_true,f_est,lambda_true,lambda_est\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            r.seq_id, r.t, r.f_true, r.f_est, r.lambda_true, r.lambda_est
        );
    }
    out
}

pub fn write_plot_csv(rows: &[GridRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, plot_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Regular lattice of cell centers over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl Grid2 {
    pub fn cell(&self) -> (f64, f64) {
        (
            (self.x[1] - self.x[0]) / self.nx as f64,
            (self.y[1] - self.y[0]) / self.ny as f64,
        )
    }

    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        let (dx, dy) = self.cell();
        (self.x[0] + (ix as f64 + 0.5) * dx, self.y[0] + (iy as f64 + 0.5) * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `σ_d = sd_d · n^{-1/6}`
    Scott,
    Fixed(f64),
}

/// Pooled density of event locations; `values` is row-major `ny x nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    pub grid: Grid2,
    pub values: Vec<f64>,
    pub bandwidth: [f64; 2],
}

impl RateMap {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.nx + ix]
    }

    pub fn riemann_sum(&self) -> f64 {
        let (dx, dy) = self.grid.cell();
        self.values.iter().sum::<f64>() * dx * dy
    }
}

/// Gaussian KDE of all 2-D marks, normalized to unit mass over the grid box.
pub fn background_rate_map(data: &Dataset, grid: &Grid2, rule: BandwidthRule) -> Result<RateMap> {
    if data.mark_dim != 2 {
        return Err(Error::InvalidArgument(format!(
            "background map needs 2-D marks, data has {}",
            data.mark_dim
        )));
    }
    if grid.nx == 0 || grid.ny == 0 || !(grid.x[1] > grid.x[0] && grid.y[1] > grid.y[0]) {
        return Err(Error::InvalidArgument("grid box must be non-empty".into()));
    }
    let pts: Vec<[f64; 2]> = data
        .sequences
        .iter()
        .flat_map(|s| s.events.iter().map(|e| [e.mark[0], e.mark[1]]))
        .collect();
    if pts.is_empty() {
        return Err(Error::InvalidArgument("no events to map".into()));
    }
    let bandwidth = match rule {
        BandwidthRule::Fixed(s) if s > 0.0 => [s, s],
        BandwidthRule::Fixed(_) => return Err(Error::InvalidArgument("bandwidth must be positive".into())),
        BandwidthRule::Scott => {
            let n = pts.len() as f64;
            let f = n.powf(-1.0 / 6.0);
            let mut bw = [0.0; 2];
            for (d, b) in bw.iter_mut().enumerate() {
                let m = pts.iter().map(|p| p[d]).sum::<f64>() / n;
                let var = pts.iter().map(|p| (p[d] - m).powi(2)).sum::<f64>() / n;
                *b = (var.sqrt() * f).max(crate::kde::BANDWIDTH_FLOOR);
            }
            bw
        }
    };
    let values: Vec<f64> = (0..grid.ny * grid.nx)
        .into_par_iter()
        .map(|c| {
            let (x, y) = grid.center(c % grid.nx, c / grid.nx);
            pts.iter()
                .map(|p| {
                    let u = (x - p[0]) / bandwidth[0];
                    let v = (y - p[1]) / bandwidth[1];
                    (-0.5 * (u * u + v * v)).exp()
                })
                .sum::<f64>()
        })
        .collect();
    let (dx, dy) = grid.cell();
    let mass = values.iter().sum::<f64>() * dx * dy;
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Numeric("background map has no mass on the grid".into()));
    }
    Ok(RateMap {
        grid: grid.clone(),
        values: values.into_iter().map(|v| v / mass).collect(),
        bandwidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::IntensityBound;

    #[test]
    fn mre_examples() {
        assert_eq!(mre(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mre(&[1.1, 2.2], &[1.0, 2.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!((mre(&[1.0, 3.0], &[2.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(mre(&[1.0], &[0.0]).is_err());
        assert!(mre(&[1.0], &[1.0, 2.0]).is_err());
        let a = [0.3, 1.7, 2.2];
        let b = [0.4, 1.5, 2.0];
        let s: Vec<f64> = a.iter().map(|x| x * 7.5).collect();
        let t: Vec<f64> = b.iter().map(|x| x * 7.5).collect();
        assert!((mre(&a, &b).unwrap() - mre(&s, &t).unwrap()).abs() < 1e-15);
    }

    fn se() -> ClassicalModel {
        ClassicalModel::SelfExciting { mu: 0.5, beta: 1.0 }
    }

    #[test]
    fn oracle_estimator_has_zero_error() {
        let truth = se();
        let data = truth.simulate_dataset(5, 10.0, IntensityBound::Adaptive, 3, 0).unwrap();
        let ev = evaluate_with(&truth, &truth, &data, &EvalConfig::default()).unwrap();
        assert_eq!(ev.report.mre_f, 0.0);
        assert_eq!(ev.report.mre_lambda, 0.0);
        assert_eq!(ev.report.n_events, data.total_events());
        assert!((ev.report.test_ll_per_event - ev.report.truth_ll_per_event).abs() < 1e-12);
        assert_eq!(ev.rows.len(), ev.report.n_grid_points);
        // the per-event value is the exact log-likelihood minus the tail survival term
        let tail: f64 = data
            .sequences
            .iter()
            .map(|s| truth.compensator(&s.events, s.events.last().map_or(0.0, |e| e.time), s.horizon))
            .sum();
        let exact: f64 = data.sequences.iter().map(|s| truth.exact_loglik(s).unwrap()).sum();
        let n = data.total_events() as f64;
        assert!(((exact + tail) / n - ev.report.test_ll_per_event).abs() < 1e-9);
    }

    #[test]
    fn loglik_single_event_and_duplication() {
        let truth = se();
        let one = Dataset::new(vec![EventSequence::new(vec![Event::time_only(0.7)], 5.0)], 0).unwrap();
        let ll = test_loglik_with(&truth, &one, 0, 1e-12).unwrap();
        assert!((ll - truth.cond_pdf(0.7, &[], &[]).unwrap().ln()).abs() < 1e-15);
        let data = truth.simulate_dataset(4, 10.0, IntensityBound::Adaptive, 5, 0).unwrap();
        let mut doubled = data.sequences.clone();
        doubled.extend(data.sequences.clone());
        let doubled = Dataset::new(doubled, 0).unwrap();
        let a = test_loglik_with(&truth, &data, 0, 1e-12).unwrap();
        let b = test_loglik_with(&truth, &doubled, 0, 1e-12).unwrap();
        assert!((a - b).abs() < 1e-12);
        let empty = Dataset::new(vec![EventSequence::new(vec![], 1.0)], 0).unwrap();
        assert!(test_loglik_with(&truth, &empty, 0, 1e-12).is_err());
    }

    #[test]
    fn ceg_evaluation_is_deterministic() {
        use crate::nets::{Architecture, Standardization};
        let truth = se();
        let data = truth.simulate_dataset(3, 8.0, IntensityBound::Adaptive, 7, 0).unwrap();
        let arch = Architecture {
            noise_dim: 3,
            hidden_dim: 4,
            mark_dim: 0,
            generator_widths: vec![5],
            cvae_width: 4,
            dt_floor: 1e-6,
        };
        let model = CegModel::init(arch, Standardization::fit(&data), false, StreamKey::new(1)).unwrap();
        let cfg = EvalConfig {
            sample_count: 50,
            grid_points: 4,
            ..EvalConfig::default()
        };
        let a = evaluate(&model, &truth, &data, &cfg).unwrap();
        let b = evaluate(&model, &truth, &data, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert!(a.report.mre_f.is_finite() && a.report.mre_lambda.is_finite());
        let csv = plot_csv(&a.rows);
        assert!(csv.starts_with("seq_id,t,f_true,f_est,lambda_true,lambda_est\n"));
        assert_eq!(csv.lines().count(), a.rows.len() + 1);
        let ll = test_loglik(&model, &data, 50, &cfg.kde, 0).unwrap();
        assert_eq!(ll, a.report.test_ll_per_event);
    }

    fn marks_dataset(pts: Vec<[f64; 2]>) -> Dataset {
        let events = pts
            .into_iter()
            .enumerate()
            .map(|(i, p)| Event::new(i as f64 * 0.01, p.to_vec()))
            .collect();
        Dataset::new(vec![EventSequence::new(events, 1e9)], 2).unwrap()
    }

    #[test]
    fn rate_map_point_mass() {
        let data = marks_dataset(vec![[2.05, 3.05]; 10]);
        let grid = Grid2 {
            x: [0.0, 5.0],
            y: [0.0, 5.0],
            nx: 50,
            ny: 50,
        };
        let map = background_rate_map(&data, &grid, BandwidthRule::Fixed(0.2)).unwrap();
        assert!((map.riemann_sum() - 1.0).abs() < 1e-12);
        let peak = map.values.iter().copied().fold(0.0, f64::max);
        assert_eq!(map.at(20, 30), peak);
        // more than 5 bandwidths away
        assert!(map.at(35, 30) < 1e-5 * peak);
    }

    #[test]
    fn rate_map_uniform_is_flat() {
        use rand::Rng as _;
        let mut rng = StreamKey::new(4).rng();
        let pts = (0..10_000)
            .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
            .collect();
        let data = marks_dataset(pts);
        let grid = Grid2 {
            x: [0.0, 10.0],
            y: [0.0, 10.0],
            nx: 20,
            ny: 20,
        };
        let map = background_rate_map(&data, &grid, BandwidthRule::Fixed(1.0)).unwrap();
        assert!((map.riemann_sum() - 1.0).abs() < 1e-3);
        let interior: Vec<f64> = (6..14)
            .flat_map(|iy| (6..14).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| map.at(ix, iy))
            .collect();
        // cells at least 3 bandwidths from the box edge, where the unbounded kernel loses no mass
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!(interior.iter().all(|v| (v - mean).abs() < 0.1 * mean));
        assert!(background_rate_map(&Dataset::new(vec![], 1).unwrap(), &grid, BandwidthRule::Scott).is_err());
    }
}
