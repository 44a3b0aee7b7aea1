//! Inference with a trained generator: sequence generation, next-event
//! sampling and prediction, and the model-implied density and intensity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Event, EventSequence};
use crate::error::{Error, Result};
use crate::kde::{KdeConfig, SampleCloud};
use crate::nets::CegModel;
use crate::rng::{tag, Rng, StreamKey};

pub const INTENSITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub horizon: f64,
    pub max_events: usize,
    pub seed: u64,
    /// `L` for density queries
    pub sample_count: usize,
    /// clamp generated marks to these bounds
    pub mark_bounds: Option<Vec<(f64, f64)>>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            horizon: 100.0,
            max_events: 100_000,
            seed: 0,
            sample_count: 1000,
            mark_bounds: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if self.max_events == 0 {
            return Err(Error::InvalidArgument("max_events must be at least 1".into()));
        }
        if self.sample_count == 0 {
            return Err(Error::InvalidArgument("sample_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// A generated sequence plus whether it stopped at `max_events`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub sequence: EventSequence,
    pub truncated: bool,
}

/// Runs the generator forward from an empty history until time passes `T`.
///
/// The event that crosses the horizon is generated and then dropped.
pub fn generate_sequence(model: &CegModel, cfg: &GenerationConfig, rng: &mut Rng) -> Result<Generated> {
    cfg.validate()?;
    let bounds = cfg.mark_bounds.as_deref();
    let mut state = crate::nets::LstmState::zeros(model.arch.hidden_dim);
    let mut events: Vec<Event> = Vec::new();
    let mut t = 0.0;
    let mut truncated = false;
    while t < cfg.horizon {
        let z = model.draw_latent(&state.h, 1, rng)?;
        let (dt, mark) = model.generator_forward(z.data(), &state.h, bounds)?;
        t += dt;
        events.push(Event::new(t, mark));
        if events.len() >= cfg.max_events {
            truncated = true;
            break;
        }
        let last = events.last().expect("just pushed");
        state = model.lstm_step(dt, &last.mark, &state)?;
    }
    if events.last().is_some_and(|e| e.time >= cfg.horizon) {
        events.pop();
    }
    Ok(Generated {
        sequence: EventSequence::new(events, cfg.horizon),
        truncated,
    })
}

/// `n` sequences in parallel; sequence `i` uses stream `(seed, GENERATE, i)`.
pub fn generate_many(model: &CegModel, cfg: &GenerationConfig, n: usize) -> Result<Vec<Generated>> {
    let base = StreamKey::new(cfg.seed).derive(tag::GENERATE);
    (0..n)
        .into_par_iter()
        .map(|i| generate_sequence(model, cfg, &mut base.derive(i as u64).rng()))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn check_history(history: &[Event], mark_dim: usize) -> Result<()> {
    for (i, e) in history.iter().enumerate() {
        if e.mark.len() != mark_dim {
            return Err(Error::InvalidArgument(format!(
                "history event {i} has {} mark values, model expects {mark_dim}",
                e.mark.len()
            )));
        }
    }
    Ok(())
}

/// `L` draws `(dt, mark)` for the next event, row-major `L x (1 + d_m)` in data units.
pub fn draw_next(model: &CegModel, history: &[Event], l: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    check_history(history, model.arch.mark_dim)?;
    let h = model.encode_history(history)?;
    draw_from_embedding(model, &h, l, rng)
}

/// As [`draw_next`] with a precomputed history embedding.
pub fn draw_from_embedding(model: &CegModel, h: &[f64], l: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let z = model.draw_latent(h, l, rng)?;
    let (dt, marks) = model.generate_batch(&z, h)?;
    Ok(flatten(&dt, &marks))
}

fn flatten(dt: &[f64], marks: &[Vec<f64>]) -> Vec<f64> {
    dt.iter()
        .zip(marks)
        .flat_map(|(d, m)| std::iter::once(*d).chain(m.iter().copied()))
        .collect()
}

/// Cloud of `L` generated next events with kNN bandwidths.
pub fn sample_next(
    model: &CegModel,
    history: &[Event],
    l: usize,
    kde: &KdeConfig,
    rng: &mut Rng,
) -> Result<SampleCloud> {
    let pts = draw_next(model, history, l, rng)?;
    SampleCloud::from_samples(pts, model.arch.event_width(), kde)
}

/// Sample-mean prediction of the next event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub time: f64,
    pub dt_mean: f64,
    pub mark_mean: Vec<f64>,
    #[serde(rename = "L")]
    pub l: usize,
}

pub fn predict_next(model: &CegModel, history: &[Event], l: usize, rng: &mut Rng) -> Result<Prediction> {
    let pts = draw_next(model, history, l, rng)?;
    Ok(prediction_from_samples(&pts, model.arch.event_width(), history))
}

pub fn prediction_from_samples(pts: &[f64], dim: usize, history: &[Event]) -> Prediction {
    let l = pts.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in pts.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= l as f64;
    }
    let tn = history.last().map_or(0.0, |e| e.time);
    Prediction {
        time: tn + mean[0],
        dt_mean: mean[0],
        mark_mean: mean[1..].to_vec(),
        l,
    }
}

fn query_dt(x: &Event, history: &[Event]) -> Result<f64> {
    let tn = history.last().map_or(0.0, |e| e.time);
    if history.is_empty() {
        if x.time < 0.0 {
            return Err(Error::InvalidArgument("query time must be non-negative".into()));
        }
    } else if x.time <= tn {
        return Err(Error::InvalidArgument(format!(
            "query time {} is not after the last history event at {tn}",
            x.time
        )));
    }
    Ok(x.time - tn)
}

/// KDE estimate of `f(x | history)`.
pub fn cond_pdf(
    model: &CegModel,
    x: &Event,
    history: &[Event],
    l: usize,
    kde: &KdeConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let dt = query_dt(x, history)?;
    sample_next(model, history, l, kde, rng)?.pdf(dt, &x.mark)
}

/// `λ = f / (1 − F)`, with the flag set when `1 − F` fell below [`INTENSITY_EPS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntensityValue {
    pub value: f64,
    pub clamped: bool,
}

/// Intensity at `(dt, mark)` implied by a cloud.
pub fn intensity_from_cloud(cloud: &SampleCloud, dt: f64, mark: &[f64]) -> Result<IntensityValue> {
    let f = cloud.pdf(dt, mark)?;
    let surv = cloud.survival_time(dt)?;
    Ok(if surv < INTENSITY_EPS {
        IntensityValue {
            value: f / INTENSITY_EPS,
            clamped: true,
        }
    } else {
        IntensityValue {
            value: f / surv,
            clamped: false,
        }
    })
}

pub fn cond_intensity(
    model: &CegModel,
    x: &Event,
    history: &[Event],
    l: usize,
    kde: &KdeConfig,
    rng: &mut Rng,
) -> Result<IntensityValue> {
    let dt = query_dt(x, history)?;
    intensity_from_cloud(&sample_next(model, history, l, kde, rng)?, dt, &x.mark)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Architecture, Standardization};

    fn arch(dm: usize) -> Architecture {
        Architecture {
            noise_dim: 3,
            hidden_dim: 4,
            mark_dim: dm,
            generator_widths: vec![5],
            cvae_width: 4,
            dt_floor: 1e-6,
        }
    }

    /// Generator whose output is exactly `dt` regardless of input.
    fn constant_gap(dt: f64) -> CegModel {
        let mut m = CegModel::init(arch(0), Standardization::identity(0), false, StreamKey::new(1)).unwrap();
        for p in m.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let last = *m.generator().layers.last().unwrap();
        m.params.get_mut(last.b).data_mut()[0] = dt;
        m
    }

    #[test]
    fn constant_gap_trace() {
        let m = constant_gap(0.5);
        let cfg = GenerationConfig {
            horizon: 2.0,
            ..Default::default()
        };
        let g = generate_sequence(&m, &cfg, &mut StreamKey::new(0).rng()).unwrap();
        assert_eq!(g.sequence.times().collect::<Vec<_>>(), vec![0.5, 1.0, 1.5]);
        assert!(!g.truncated);
        let cfg = GenerationConfig {
            horizon: 0.3,
            ..Default::default()
        };
        assert!(generate_sequence(&m, &cfg, &mut StreamKey::new(0).rng())
            .unwrap()
            .sequence
            .is_empty());
    }

    #[test]
    fn truncation_is_flagged() {
        let m = constant_gap(0.0);
        let cfg = GenerationConfig {
            horizon: 1.0,
            max_events: 50,
            ..Default::default()
        };
        let g = generate_sequence(&m, &cfg, &mut StreamKey::new(0).rng()).unwrap();
        assert!(g.truncated);
        assert_eq!(g.sequence.len(), 50);
        assert!(crate::data::validate_sequence(&g.sequence, 0).is_empty());
    }

    #[test]
    fn generation_is_reproducible_and_valid() {
        let m = CegModel::init(arch(2), Standardization::identity(2), false, StreamKey::new(5)).unwrap();
        let cfg = GenerationConfig {
            horizon: 20.0,
            mark_bounds: Some(vec![(-1.0, 1.0), (0.0, 2.0)]),
            ..Default::default()
        };
        let a = generate_many(&m, &cfg, 3).unwrap();
        let b = generate_many(&m, &cfg, 3).unwrap();
        assert_eq!(a, b);
        for g in &a {
            assert!(crate::data::validate_sequence(&g.sequence, 2).is_empty());
            for e in &g.sequence.events {
                assert!((-1.0..=1.0).contains(&e.mark[0]) && (0.0..=2.0).contains(&e.mark[1]));
            }
        }
    }

    #[test]
    fn single_draw_matches_generator() {
        let m = CegModel::init(arch(1), Standardization::identity(1), false, StreamKey::new(9)).unwrap();
        let hist = [Event::new(0.4, vec![0.1])];
        let pts = draw_next(&m, &hist, 1, &mut StreamKey::new(3).rng()).unwrap();
        let h = m.encode_history(&hist).unwrap();
        let z = m.draw_latent(&h, 1, &mut StreamKey::new(3).rng()).unwrap();
        let (dt, mark) = m.generator_forward(z.data(), &h, None).unwrap();
        assert_eq!(pts, vec![dt, mark[0]]);
    }

    #[test]
    fn z_blind_generator_gives_identical_samples_and_prediction() {
        let m = constant_gap(0.7);
        let pts = draw_next(&m, &[], 10, &mut StreamKey::new(3).rng()).unwrap();
        assert!(pts.iter().all(|&v| v == 0.7));
        let p = predict_next(&m, &[Event::time_only(1.0)], 10, &mut StreamKey::new(3).rng()).unwrap();
        assert!((p.dt_mean - 0.7).abs() < 1e-15);
        assert!((p.time - 1.7).abs() < 1e-15);
        let p = prediction_from_samples(&[1.0, 3.0], 1, &[]);
        assert_eq!(p.dt_mean, 2.0);
    }

    #[test]
    fn intensity_of_exponential_stand_in() {
        // deterministic quantiles of Exp(2) stand in for generated gaps
        let n = 4000;
        let pts: Vec<f64> = (0..n)
            .map(|i| -((1.0 - (i as f64 + 0.5) / n as f64).ln()) / 2.0)
            .collect();
        let kde = KdeConfig {
            bandwidth_scale: 1.0,
            ..KdeConfig::default()
        };
        let cloud = SampleCloud::from_samples(pts, 1, &kde).unwrap();
        for dt in [0.2, 0.5, 0.8] {
            let lam = intensity_from_cloud(&cloud, dt, &[]).unwrap();
            assert!((lam.value - 2.0).abs() < 0.2, "{dt}: {}", lam.value);
        }
        let near = intensity_from_cloud(&cloud, 0.0, &[]).unwrap();
        assert_eq!(near.value, cloud.pdf(0.0, &[]).unwrap());
        let far = intensity_from_cloud(&cloud, 1e3, &[]).unwrap();
        assert!(far.clamped && far.value >= 0.0);
    }

    #[test]
    fn density_queries_validate_time() {
        let m = constant_gap(0.5);
        let hist = [Event::time_only(1.0)];
        let kde = KdeConfig::default();
        assert!(cond_pdf(
            &m,
            &Event::time_only(0.9),
            &hist,
            10,
            &kde,
            &mut StreamKey::new(0).rng()
        )
        .is_err());
        let m = CegModel::init(arch(0), Standardization::identity(0), false, StreamKey::new(2)).unwrap();
        let f = cond_pdf(
            &m,
            &Event::time_only(1.5),
            &hist,
            50,
            &kde,
            &mut StreamKey::new(0).rng(),
        )
        .unwrap();
        assert!(f >= 0.0 && f.is_finite());
    }
}
