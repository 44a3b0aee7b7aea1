//! Kernel density estimates built from generated samples.
//!
//! A cloud holds `L` points `(dt, mark)`. Each point carries one bandwidth
//! shared by all coordinates; the time coordinate is reflected at zero so no
//! mass leaks below the boundary. Points are standardized per dimension before
//! bandwidths are computed: marks are centered and scaled, time is only scaled
//! so the boundary stays at zero. Densities are reported in data units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{std_normal_cdf, INV_SQRT_2PI};

pub const BANDWIDTH_FLOOR: f64 = 1e-4;

/// `⌈√L⌉`
pub fn default_k(l: usize) -> usize {
    (l as f64).sqrt().ceil() as usize
}

/// Knobs for building a cloud from raw samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdeConfig {
    /// neighbor count; `None` means `⌈√L⌉`
    pub k: Option<usize>,
    /// multiplier applied to the kNN distance before flooring
    pub bandwidth_scale: f64,
    pub floor: f64,
    pub reflect: bool,
    pub standardize: bool,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            k: None,
            bandwidth_scale: 6.0,
            floor: BANDWIDTH_FLOOR,
            reflect: true,
            standardize: true,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(Error::InvalidArgument("bandwidth_scale must be positive".into()));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::InvalidArgument("bandwidth floor must be positive".into()));
        }
        if self.k == Some(0) {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Distance from each point to its `k`-th nearest other point (Euclidean,
/// all coordinates). `points` is row-major `L x dim`.
pub fn knn_distances(points: &[f64], dim: usize, k: usize) -> Result<Vec<f64>> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(
            "points must be a non-empty L x dim array".into(),
        ));
    }
    let l = points.len() / dim;
    if k == 0 || k >= l {
        return Err(Error::InvalidArgument(format!("k = {k} needs 1 <= k < L, but L = {l}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample in cloud".into()));
    }
    if dim == 1 {
        return Ok(knn_1d(points, k));
    }
    let mut d2 = vec![0.0; l - 1];
    Ok((0..l)
        .map(|j| {
            let pj = &points[j * dim..(j + 1) * dim];
            for (slot, i) in d2.iter_mut().zip((0..l).filter(|&i| i != j)) {
                let pi = &points[i * dim..(i + 1) * dim];
                *slot = pj.iter().zip(pi).map(|(a, b)| (a - b) * (a - b)).sum();
            }
            let (_, kth, _) = d2.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.sqrt()
        })
        .collect())
}

/// Sorted scan: the k nearest neighbors on a line are contiguous.
fn knn_1d(values: &[f64], k: usize) -> Vec<f64> {
    let l = values.len();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut out = vec![0.0; l];
    for (pos, &orig) in order.iter().enumerate() {
        let x = sorted[pos];
        let (mut lo, mut hi) = (pos, pos + 1);
        let mut last = 0.0;
        for _ in 0..k {
            let left = (lo > 0).then(|| x - sorted[lo - 1]);
            let right = (hi < l).then(|| sorted[hi] - x);
            last = match (left, right) {
                (Some(a), Some(b)) if a <= b => {
                    lo -= 1;
                    a
                }
                (Some(a), None) => {
                    lo -= 1;
                    a
                }
                (_, Some(b)) => {
                    hi += 1;
                    b
                }
                (None, None) => unreachable!("k < L"),
            };
        }
        out[orig] = last;
    }
    out
}

/// `max(k-th nearest neighbor distance, floor)` for every sample.
pub fn knn_bandwidths(points: &[f64], dim: usize, k: usize) -> Result<Vec<f64>> {
    Ok(knn_distances(points, dim, k)?
        .into_iter()
        .map(|d| d.max(BANDWIDTH_FLOOR))
        .collect())
}

/// Per-dimension affine map `x_std = (x - shift) / scale`; `shift[0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl CloudScaling {
    pub fn identity(dim: usize) -> Self {
        CloudScaling {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Time scaled by its standard deviation, marks by mean and standard deviation.
    pub fn fit(points: &[f64], dim: usize) -> Self {
        let l = (points.len() / dim) as f64;
        let mut shift = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for d in 0..dim {
            let col = points.iter().skip(d).step_by(dim);
            let mean = col.clone().sum::<f64>() / l;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / l;
            if d > 0 {
                shift[d] = mean;
            }
            if var > 1e-24 {
                scale[d] = var.sqrt();
            }
        }
        CloudScaling { shift, scale }
    }

    pub fn apply(&self, points: &mut [f64]) {
        let dim = self.scale.len();
        for row in points.chunks_mut(dim) {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - self.shift[d]) / self.scale[d];
            }
        }
    }

    /// `log |det d(x_std)/dx|`
    pub fn log_jacobian(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// `L` weighted kernels over `(dt, mark)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    dim: usize,
    /// standardized, row-major `L x dim`; column 0 is time
    points: Vec<f64>,
    sigma: Vec<f64>,
    k: usize,
    reflect: bool,
    scaling: CloudScaling,
}

impl SampleCloud {
    /// Cloud with explicit bandwidths and no standardization.
    pub fn with_bandwidths(points: Vec<f64>, dim: usize, sigma: Vec<f64>) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) || points.len() / dim != sigma.len() || sigma.is_empty() {
            return Err(Error::InvalidArgument(
                "cloud needs L x dim points and L bandwidths".into(),
            ));
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("bandwidths must be positive".into()));
        }
        check_points(&points, dim)?;
        Ok(SampleCloud {
            dim,
            points,
            sigma,
            k: 0,
            reflect: true,
            scaling: CloudScaling::identity(dim),
        })
    }

    /// Standardizes `points` and derives kNN bandwidths.
    pub fn from_samples(mut points: Vec<f64>, dim: usize, cfg: &KdeConfig) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument("points must be an L x dim array".into()));
        }
        check_points(&points, dim)?;
        let l = points.len() / dim;
        if l < 2 {
            return Err(Error::InvalidArgument("kNN bandwidths need at least 2 samples".into()));
        }
        let k = cfg.k.unwrap_or_else(|| default_k(l));
        let scaling = if cfg.standardize {
            CloudScaling::fit(&points, dim)
        } else {
            CloudScaling::identity(dim)
        };
        scaling.apply(&mut points);
        let sigma = knn_distances(&points, dim, k)?
            .into_iter()
            .map(|d| (cfg.bandwidth_scale * d).max(cfg.floor))
            .collect();
        Ok(SampleCloud {
            dim,
            points,
            sigma,
            k,
            reflect: cfg.reflect,
            scaling,
        })
    }

    pub fn with_reflection(mut self, reflect: bool) -> Self {
        self.reflect = reflect;
        self
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reflects(&self) -> bool {
        self.reflect
    }

    /// Bandwidths in standardized units.
    pub fn bandwidths(&self) -> &[f64] {
        &self.sigma
    }

    pub fn scaling(&self) -> &CloudScaling {
        &self.scaling
    }

    /// Standardized sample points.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        if dt < 0.0 || dt.is_nan() {
            return Err(Error::InvalidArgument(format!("query dt must be >= 0, got {dt}")));
        }
        Ok(())
    }

    /// Joint density at `(dt, mark)`.
    pub fn pdf(&self, dt: f64, mark: &[f64]) -> Result<f64> {
        self.check_dt(dt)?;
        if mark.len() + 1 != self.dim {
            return Err(Error::InvalidArgument(format!(
                "query mark has {} dimensions, cloud has {}",
                mark.len(),
                self.dim - 1
            )));
        }
        let s = &self.scaling;
        let q0 = dt / s.scale[0];
        let qm: Vec<f64> = mark
            .iter()
            .enumerate()
            .map(|(d, m)| (m - s.shift[d + 1]) / s.scale[d + 1])
            .collect();
        let dim = self.dim;
        let total: f64 = self
            .sigma
            .iter()
            .enumerate()
            .map(|(j, &sig)| {
                let p = &self.points[j * dim..(j + 1) * dim];
                let mut kt = gauss(q0 - p[0], sig);
                if self.reflect {
                    kt += gauss(q0 + p[0], sig);
                }
                let mut dist2 = 0.0;
                for (q, x) in qm.iter().zip(&p[1..]) {
                    dist2 += (q - x) * (q - x);
                }
                let nm = (dim - 1) as i32;
                kt * (INV_SQRT_2PI / sig).powi(nm) * (-0.5 * dist2 / (sig * sig)).exp()
            })
            .sum();
        Ok(total / self.len() as f64 * s.log_jacobian().exp())
    }

    /// Time-marginal density at `dt`.
    pub fn pdf_time(&self, dt: f64) -> Result<f64> {
        self.check_dt(dt)?;
        let q0 = dt / self.scaling.scale[0];
        let total: f64 = self
            .sigma
            .iter()
            .enumerate()
            .map(|(j, &sig)| {
                let t = self.points[j * self.dim];
                let mut k = gauss(q0 - t, sig);
                if self.reflect {
                    k += gauss(q0 + t, sig);
                }
                k
            })
            .sum();
        Ok(total / self.len() as f64 / self.scaling.scale[0])
    }

    /// `∫_0^t` of the time-marginal density.
    pub fn cdf_time(&self, t: f64) -> Result<f64> {
        self.check_dt(t)?;
        let q = t / self.scaling.scale[0];
        let total: f64 = self
            .sigma
            .iter()
            .enumerate()
            .map(|(j, &sig)| {
                let c = self.points[j * self.dim];
                let mut m = normal_mass(-c / sig, (q - c) / sig);
                if self.reflect {
                    m += normal_mass(c / sig, (q + c) / sig);
                }
                m
            })
            .sum();
        Ok((total / self.len() as f64).clamp(0.0, 1.0))
    }

    /// `∫_t^∞` of the time-marginal density.
    pub fn survival_time(&self, t: f64) -> Result<f64> {
        self.check_dt(t)?;
        let q = t / self.scaling.scale[0];
        let total: f64 = self
            .sigma
            .iter()
            .enumerate()
            .map(|(j, &sig)| {
                let c = self.points[j * self.dim];
                let mut m = upper_tail((q - c) / sig);
                if self.reflect {
                    m += upper_tail((q + c) / sig);
                }
                m
            })
            .sum();
        Ok((total / self.len() as f64).clamp(0.0, 1.0))
    }
}

fn check_points(points: &[f64], dim: usize) -> Result<()> {
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample in cloud".into()));
    }
    if points.iter().step_by(dim).any(|t| *t < 0.0) {
        return Err(Error::InvalidArgument("sample times must be non-negative".into()));
    }
    Ok(())
}

fn gauss(x: f64, sigma: f64) -> f64 {
    let u = x / sigma;
    INV_SQRT_2PI / sigma * (-0.5 * u * u).exp()
}

fn upper_tail(x: f64) -> f64 {
    std_normal_cdf(-x)
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, evaluated on the side that avoids cancellation.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        upper_tail(a) - upper_tail(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// Density of the cloud at `(dt, mark)`.
pub fn cond_pdf_kde(dt: f64, mark: &[f64], cloud: &SampleCloud) -> Result<f64> {
    cloud.pdf(dt, mark)
}

/// Time-marginal CDF of the cloud at `t`.
pub fn cdf_time_kde(t: f64, cloud: &SampleCloud) -> Result<f64> {
    cloud.cdf_time(t)
}
