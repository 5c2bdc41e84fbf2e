//! Overdamped Langevin exit times `dX = −2∇f dt + √(2h) dB` and the
//! Arrhenius slope of their means.

use crate::labeling::LabelingResult;
use crate::manifolds::CriticalManifold;
use crate::potential::expr::EvalError;
use crate::potential::Potential;
use crate::sublevel::{components, GridSampling};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("time step {dt} exceeds the stability bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("minimum `{0}` has no finite barrier, so no exit event is defined")]
    NoBarrier(String),
    #[error("minimum index {0} out of range")]
    OutOfRange(usize),
    #[error("minimum `{0}` has a node outside the grid")]
    OffGrid(String),
    #[error("exit margin {margin} must lie in (0, {barrier})")]
    Margin { margin: f64, barrier: f64 },
    #[error("no sampled cell lies below level {0}")]
    EmptyRegion(f64),
    #[error("minimum `{0}` is not inside a sublevel component at the exit level")]
    NotInComponent(String),
    #[error("{censored} of {paths} paths censored at T = {horizon}; increase the horizon")]
    Censored { censored: usize, paths: usize, horizon: f64 },
    #[error("degenerate fit: {usable} distinct h values, at least 3 needed")]
    Degenerate { usable: usize },
    #[error("path {path} produced a non-finite state at t = {time}")]
    Blowup { path: usize, time: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Cells where a path counts as having left `E(m)`: the other
/// components of `{f < σ(m) − margin}`, i.e. the path has crossed the
/// saddle level and descended into a different basin.
#[derive(Debug, Clone)]
pub struct ExitRegion {
    pub minimum: String,
    pub sigma: f64,
    pub barrier: f64,
    pub margin: f64,
    pub level: f64,
    pub mask: Vec<bool>,
}

impl ExitRegion {
    pub fn contains(&self, g: &GridSampling, x: &[f64]) -> bool {
        g.cell_of(x).is_some_and(|c| self.mask[c])
    }
}

/// Builds the exit region for minimum `index` of `l`. `margin` is a
/// fraction of the barrier `S(m)`.
pub fn exit_region(
    m: &CriticalManifold,
    l: &LabelingResult,
    index: usize,
    g: &GridSampling,
    margin_fraction: f64,
) -> Result<ExitRegion, SdeError> {
    let label = l.minima.get(index).ok_or(SdeError::OutOfRange(index))?;
    if !label.barrier.is_finite() || !label.sigma.is_finite() {
        return Err(SdeError::NoBarrier(label.name.clone()));
    }
    let margin = margin_fraction * label.barrier;
    if !(margin > 0.0 && margin < label.barrier) {
        return Err(SdeError::Margin { margin, barrier: label.barrier });
    }
    let level = label.sigma - margin;
    let map = components(g, level);
    if map.count == 0 {
        return Err(SdeError::EmptyRegion(level));
    }
    let cell = m
        .nodes
        .first()
        .and_then(|n| g.cell_of(&n.point))
        .ok_or_else(|| SdeError::OffGrid(m.name.clone()))?;
    let own = map.labels[cell];
    if own < 0 {
        return Err(SdeError::NotInComponent(m.name.clone()));
    }
    let mask = map.labels.iter().map(|&c| c >= 0 && c != own).collect();
    Ok(ExitRegion { minimum: label.name.clone(), sigma: label.sigma, barrier: label.barrier, margin, level, mask })
}

/// Largest `|Hess f|` eigenvalue over the cells below `level`, sampled on
/// at most `max_cells` cells.
pub fn max_hessian(p: &Potential, g: &GridSampling, level: f64, max_cells: usize) -> Result<f64, SdeError> {
    let cells: Vec<usize> = (0..g.len()).filter(|&i| g.values[i] < level).collect();
    if cells.is_empty() {
        return Err(SdeError::EmptyRegion(level));
    }
    let step = cells.len().div_ceil(max_cells.max(1));
    let maxima = cells
        .par_iter()
        .step_by(step)
        .map(|&c| {
            let e = p.eval2(&g.center(c))?;
            Ok(e.hessian.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs())))
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    Ok(maxima.into_iter().fold(0.0, f64::max))
}

/// Stability bound `h / (10 max |Hess f|)` sampled on `{f < σ(m) + S(m)}`.
pub fn stable_dt(p: &Potential, g: &GridSampling, sigma: f64, barrier: f64, h: f64) -> Result<f64, SdeError> {
    positive("h", h)?;
    let hmax = max_hessian(p, g, sigma + barrier, 20_000)?;
    Ok(h / (10.0 * hmax.max(f64::MIN_POSITIVE)))
}

fn positive(name: &'static str, value: f64) -> Result<(), SdeError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SdeError::NonPositive { name, value })
    }
}

#[derive(Debug, Clone)]
pub struct LangevinConfig {
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub region: ExitRegion,
}

impl LangevinConfig {
    /// Config with the time step at the stability bound.
    pub fn new(
        p: &Potential,
        g: &GridSampling,
        region: ExitRegion,
        h: f64,
        horizon: f64,
        paths: usize,
        seed: u64,
    ) -> Result<Self, SdeError> {
        let dt = stable_dt(p, g, region.sigma, region.barrier, h)?;
        Ok(LangevinConfig { h, dt, horizon, paths, seed, region })
    }

    /// Checks the step against the stability bound.
    pub fn validate(&self, p: &Potential, g: &GridSampling) -> Result<(), SdeError> {
        positive("h", self.h)?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        if self.paths == 0 {
            return Err(SdeError::NonPositive { name: "paths", value: 0.0 });
        }
        let bound = stable_dt(p, g, self.region.sigma, self.region.barrier, self.h)?;
        if self.dt > bound * (1.0 + 1e-12) {
            return Err(SdeError::StepTooLarge { dt: self.dt, bound });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitSample {
    pub minimum: String,
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Exit time per path, or for censored paths the end of the observed
    /// window (the horizon rounded down to whole steps).
    pub times: Vec<f64>,
    pub censored: Vec<bool>,
    /// Quadrature node each path started from.
    pub start_nodes: Vec<usize>,
}

impl ExitSample {
    pub fn exits(&self) -> usize {
        self.censored.iter().filter(|&&c| !c).count()
    }

    pub fn censored_count(&self) -> usize {
        self.times.len() - self.exits()
    }

    /// Exponential maximum-likelihood mean: total observed time over the
    /// number of exits, so censored paths contribute their horizon.
    pub fn mean_exit_time(&self) -> f64 {
        mle_mean(self.times.iter().zip(&self.censored).map(|(&t, &c)| (t, c)))
    }
}

fn mle_mean(it: impl Iterator<Item = (f64, bool)>) -> f64 {
    let (mut total, mut exits) = (0.0, 0usize);
    for (t, c) in it {
        total += t;
        if !c {
            exits += 1;
        }
    }
    if exits == 0 {
        f64::INFINITY
    } else {
        total / exits as f64
    }
}

/// RNG for one path: a ChaCha stream indexed by the path number.
fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Euler-Maruyama exit times from the quadrature nodes of `m`, cycling
/// through the nodes path by path.
pub fn simulate_exit(p: &Potential, m: &CriticalManifold, g: &GridSampling, cfg: &LangevinConfig) -> Result<ExitSample, SdeError> {
    positive("h", cfg.h)?;
    positive("dt", cfg.dt)?;
    positive("horizon", cfg.horizon)?;
    if cfg.paths == 0 {
        return Err(SdeError::NonPositive { name: "paths", value: 0.0 });
    }
    if m.nodes.is_empty() {
        return Err(SdeError::OffGrid(m.name.clone()));
    }
    let steps = ((cfg.horizon / cfg.dt).floor() as u64).max(1);
    let noise = (2.0 * cfg.h * cfg.dt).sqrt();
    let d = p.dim();
    let results = (0..cfg.paths)
        .into_par_iter()
        .map(|path| {
            let node = path % m.nodes.len();
            let mut x = m.nodes[node].point.clone();
            let mut rng = path_rng(cfg.seed, path);
            for step in 1..=steps {
                let (_, grad) = p.value_grad(&x)?;
                for k in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[k] += -2.0 * grad[k] * cfg.dt + noise * z;
                }
                let t = step as f64 * cfg.dt;
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(SdeError::Blowup { path, time: t });
                }
                if cfg.region.contains(g, &x) {
                    return Ok((t, false, node));
                }
            }
            Ok((steps as f64 * cfg.dt, true, node))
        })
        .collect::<Result<Vec<_>, SdeError>>()?;
    let sample = ExitSample {
        minimum: m.name.clone(),
        h: cfg.h,
        dt: cfg.dt,
        horizon: cfg.horizon,
        seed: cfg.seed,
        times: results.iter().map(|r| r.0).collect(),
        censored: results.iter().map(|r| r.1).collect(),
        start_nodes: results.iter().map(|r| r.2).collect(),
    };
    let censored = sample.censored_count();
    if 2 * censored > cfg.paths {
        return Err(SdeError::Censored { censored, paths: cfg.paths, horizon: cfg.horizon });
    }
    Ok(sample)
}

pub const EXIT_CSV_HEADER: &str = "fixture,minimum,h,dt,path,start_node,time,censored";

pub fn exit_csv_rows(fixture: &str, s: &ExitSample) -> String {
    let mut out = String::new();
    for (i, ((t, c), n)) in s.times.iter().zip(&s.censored).zip(&s.start_nodes).enumerate() {
        let _ = writeln!(out, "{fixture},{},{},{:e},{i},{n},{t:.17e},{c}", s.minimum, s.h, s.dt);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrheniusPoint {
    pub h: f64,
    pub mean: f64,
    pub exits: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrheniusFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% percentile bootstrap interval of the slope.
    pub ci: (f64, f64),
    pub bootstrap: usize,
    pub two_s: f64,
    pub relative_error: f64,
    pub points: Vec<ArrheniusPoint>,
}

impl ArrheniusFit {
    pub fn report(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Least-squares slope of `ln(mean exit time)` against `1/h`, compared
/// with `2S`. The interval comes from resampling paths within each `h`.
pub fn arrhenius_fit(samples: &[ExitSample], barrier: f64, seed: u64) -> Result<ArrheniusFit, SdeError> {
    if !barrier.is_finite() {
        let name = samples.first().map(|s| s.minimum.clone()).unwrap_or_default();
        return Err(SdeError::NoBarrier(name));
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.h).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(SdeError::Degenerate { usable: distinct.len() });
    }
    for s in samples {
        let censored = s.censored_count();
        if s.times.is_empty() || 2 * censored > s.times.len() {
            return Err(SdeError::Censored { censored, paths: s.times.len(), horizon: s.horizon });
        }
    }
    let xs: Vec<f64> = samples.iter().map(|s| 1.0 / s.h).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.mean_exit_time().ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let mut slopes: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = path_rng(seed, b);
            let ys: Vec<f64> = samples
                .iter()
                .map(|s| {
                    let n = s.times.len();
                    let picks = (0..n).map(|_| {
                        let i = rng.random_range(0..n);
                        (s.times[i], s.censored[i])
                    });
                    mle_mean(picks).ln()
                })
                .collect();
            least_squares(&xs, &ys).0
        })
        .filter(|s| s.is_finite())
        .collect();
    slopes.sort_by(f64::total_cmp);
    let q = |f: f64| slopes[((f * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    let ci = if slopes.is_empty() { (f64::NAN, f64::NAN) } else { (q(0.025), q(0.975)) };
    let two_s = 2.0 * barrier;
    Ok(ArrheniusFit {
        slope,
        intercept,
        ci,
        bootstrap: slopes.len(),
        two_s,
        relative_error: (slope - two_s).abs() / two_s,
        points: samples
            .iter()
            .map(|s| ArrheniusPoint { h: s.h, mean: s.mean_exit_time(), exits: s.exits(), censored: s.censored_count() })
            .collect(),
    })
}
