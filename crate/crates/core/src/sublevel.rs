//! Connected components of sublevel sets on a cell-centered grid, and the
//! local and global separation tests near index-1 manifolds.

use crate::manifolds::{negative_direction_field, negative_directions, CriticalManifold, ManifoldError};
use crate::potential::expr::EvalError;
use crate::potential::{Bounds, Potential};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SublevelError {
    #[error("grid resolution must be at least 2 per axis and match the box dimension")]
    Resolution,
    #[error("potential could not be evaluated at cell {cell}: {source}")]
    Eval { cell: usize, source: EvalError },
    #[error("grid values must be finite (cell {0})")]
    NonFinite(usize),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("offset point {point:?} of `{name}` lies outside the tube or in no component")]
    OffsetOutside { name: String, point: Vec<f64> },
    #[error("tube around `{name}` is not inside the grid box")]
    TubeOutsideBox { name: String },
    #[error("offset points around `{name}` reach {count} local components")]
    Ambiguous { name: String, count: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Values of `f` at the cell centers of a uniform grid. Axis 0 varies
/// fastest in the flattened layout.
#[derive(Debug, Clone)]
pub struct GridSampling {
    pub bounds: Bounds,
    pub res: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridSampling {
    pub fn sample(p: &Potential, bounds: &Bounds, res: &[usize]) -> Result<Self, SublevelError> {
        if res.len() != bounds.dim() || res.len() != p.dim() || res.iter().any(|&n| n < 2) {
            return Err(SublevelError::Resolution);
        }
        let mut g = GridSampling { bounds: bounds.clone(), res: res.to_vec(), values: Vec::new() };
        let n = g.len();
        let values: Result<Vec<f64>, SublevelError> = (0..n)
            .into_par_iter()
            .map(|i| p.value(&g.center(i)).map_err(|source| SublevelError::Eval { cell: i, source }))
            .collect();
        g.values = values?;
        Ok(g)
    }

    pub fn from_values(bounds: Bounds, res: Vec<usize>, values: Vec<f64>) -> Result<Self, SublevelError> {
        if res.len() != bounds.dim() || res.iter().any(|&n| n < 2) || res.iter().product::<usize>() != values.len() {
            return Err(SublevelError::Resolution);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SublevelError::NonFinite(i));
        }
        Ok(GridSampling { bounds, res, values })
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.bounds.hi[k] - self.bounds.lo[k]) / self.res[k] as f64
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.res.len()];
        for k in 1..self.res.len() {
            s[k] = s[k - 1] * self.res[k - 1];
        }
        s
    }

    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        self.res
            .iter()
            .map(|&n| {
                let c = idx % n;
                idx /= n;
                c
            })
            .collect()
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(k, &c)| self.bounds.lo[k] + (c as f64 + 0.5) * self.spacing(k))
            .collect()
    }

    /// Cell containing `x`, if inside the box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.res.len() {
            let t = (x[k] - self.bounds.lo[k]) / self.spacing(k);
            if !(t >= 0.0) || t >= self.res[k] as f64 {
                return None;
            }
            idx += (t as usize).min(self.res[k] - 1) * stride;
            stride *= self.res[k];
        }
        Some(idx)
    }

    /// Calls `visit` with every face neighbor of `idx`.
    pub fn for_each_neighbor(&self, idx: usize, strides: &[usize], mut visit: impl FnMut(usize)) {
        let mut rest = idx;
        for k in 0..self.res.len() {
            let c = rest % self.res[k];
            rest /= self.res[k];
            if c > 0 {
                visit(idx - strides[k]);
            }
            if c + 1 < self.res[k] {
                visit(idx + strides[k]);
            }
        }
    }

    /// Spread of the sampled values, used to size near-critical probes.
    pub fn value_scale(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        (hi - lo).max(f64::MIN_POSITIVE)
    }

    /// Offset used to probe just below a critical level.
    pub fn probe_epsilon(&self) -> f64 {
        1e-6 * self.value_scale()
    }

    /// Probe offset below the level of a saddle whose negative curvature
    /// has magnitude at most `mu_abs`. Cell centers within one cell
    /// diagonal of the saddle sit below the level by up to about
    /// `|mu| d dx^2 / 2`, and would otherwise join the two sides.
    pub fn saddle_offset(&self, mu_abs: f64) -> f64 {
        let dx = (0..self.dim()).map(|k| self.spacing(k)).fold(0.0, f64::max);
        self.probe_epsilon().max(mu_abs * self.dim() as f64 * dx * dx)
    }
}

/// Component label per cell, `-1` for cells outside the sublevel set.
#[derive(Debug, Clone)]
pub struct ComponentMap {
    pub sigma: f64,
    pub labels: Vec<i32>,
    pub count: usize,
    pub representatives: Vec<usize>,
}

impl ComponentMap {
    pub fn label_at(&self, g: &GridSampling, x: &[f64]) -> Option<usize> {
        g.cell_of(x).and_then(|c| usize::try_from(self.labels[c]).ok())
    }

    /// Writes the labels as little-endian `i32` to `<prefix>.bin` with a
    /// text header in `<prefix>.hdr`.
    pub fn dump(&self, g: &GridSampling, prefix: &Path) -> Result<(), SublevelError> {
        let bytes: Vec<u8> = self.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_dump(g, prefix, "i32", &format!("sigma {:e}\ncomponents {}", self.sigma, self.count), &bytes)
    }
}

/// Writes a grid field as little-endian `f64` in the dump format.
pub fn dump_field(g: &GridSampling, values: &[f64], prefix: &Path, note: &str) -> Result<(), SublevelError> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_dump(g, prefix, "f64", note, &bytes)
}

fn write_dump(g: &GridSampling, prefix: &Path, dtype: &str, note: &str, bytes: &[u8]) -> Result<(), SublevelError> {
    std::fs::write(prefix.with_extension("bin"), bytes)?;
    let mut hdr = std::fs::File::create(prefix.with_extension("hdr"))?;
    writeln!(hdr, "dtype {dtype}")?;
    writeln!(hdr, "order axis0-fastest")?;
    writeln!(hdr, "dims {}", g.res.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "))?;
    writeln!(hdr, "lo {}", g.bounds.lo.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "))?;
    writeln!(hdr, "hi {}", g.bounds.hi.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "))?;
    writeln!(hdr, "{note}")?;
    Ok(())
}

/// Face-adjacent components of `{f < sigma}`, labeled in scan order.
pub fn components(g: &GridSampling, sigma: f64) -> ComponentMap {
    flood(g, sigma, None)
}

fn flood(g: &GridSampling, sigma: f64, mask: Option<&[bool]>) -> ComponentMap {
    let n = g.len();
    let strides = g.strides();
    let mut labels = vec![-1i32; n];
    let mut reps = Vec::new();
    let mut stack = Vec::new();
    let inside = |i: usize| g.values[i] < sigma && mask.is_none_or(|m| m[i]);
    for start in 0..n {
        if labels[start] >= 0 || !inside(start) {
            continue;
        }
        let id = reps.len() as i32;
        reps.push(start);
        labels[start] = id;
        stack.push(start);
        while let Some(c) = stack.pop() {
            g.for_each_neighbor(c, &strides, |nb| {
                if labels[nb] < 0 && inside(nb) {
                    labels[nb] = id;
                    stack.push(nb);
                }
            });
        }
    }
    ComponentMap { sigma, count: reps.len(), representatives: reps, labels }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocalStructure {
    OneComponent,
    /// Local labels on the `+nu` and `-nu` sides, with the offset points of
    /// the first node.
    TwoComponents { plus: usize, minus: usize, plus_point: Vec<f64>, minus_point: Vec<f64> },
}

/// Components of `{f < f(Gamma)}` inside the tube of radius `r` around
/// `gamma`, matched to the two sides of the negative normal line.
pub fn local_structure(p: &Potential, gamma: &CriticalManifold, r: f64, g: &GridSampling) -> Result<LocalStructure, SublevelError> {
    let (mu, nu) = saddle_directions(p, gamma)?;
    let sigma = gamma.critical_value(p)? - g.saddle_offset(max_abs(&mu));
    for node in &gamma.nodes {
        let mut lo = node.point.clone();
        let mut hi = node.point.clone();
        for k in 0..lo.len() {
            lo[k] -= r;
            hi[k] += r;
        }
        if !g.bounds.contains(&lo) || !g.bounds.contains(&hi) {
            return Err(SublevelError::TubeOutsideBox { name: gamma.name.clone() });
        }
    }
    let (bb_lo, bb_hi) = node_bbox(gamma, r);
    let mask: Vec<bool> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let x = g.center(i);
            x.iter().enumerate().all(|(k, v)| *v >= bb_lo[k] && *v <= bb_hi[k]) && gamma.distance_to(&x) < r
        })
        .collect();
    let map = flood(g, sigma, Some(&mask));
    let mut seen: Vec<usize> = Vec::new();
    let mut sides: Option<(usize, usize, Vec<f64>, Vec<f64>)> = None;
    for (node, dir) in gamma.nodes.iter().zip(&nu) {
        let mut labels = [0usize; 2];
        let mut points: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (s, sign) in [1.0, -1.0].iter().enumerate() {
            let x: Vec<f64> = node.point.iter().zip(dir.iter()).map(|(a, v)| a + sign * 0.5 * r * v).collect();
            let lbl = g
                .cell_of(&x)
                .filter(|&c| mask[c])
                .and_then(|c| usize::try_from(map.labels[c]).ok())
                .ok_or_else(|| SublevelError::OffsetOutside { name: gamma.name.clone(), point: x.clone() })?;
            labels[s] = lbl;
            points[s] = x;
            if !seen.contains(&lbl) {
                seen.push(lbl);
            }
        }
        if sides.is_none() {
            let [pp, mp] = points;
            sides = Some((labels[0], labels[1], pp, mp));
        }
    }
    match seen.len() {
        1 => Ok(LocalStructure::OneComponent),
        2 => {
            let (plus, minus, plus_point, minus_point) = sides.expect("at least one node");
            if plus == minus {
                return Ok(LocalStructure::OneComponent);
            }
            Ok(LocalStructure::TwoComponents { plus, minus, plus_point, minus_point })
        }
        count => Err(SublevelError::Ambiguous { name: gamma.name.clone(), count }),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Negative eigenpairs along `gamma`, oriented when the normal line is
/// orientable.
fn saddle_directions(p: &Potential, gamma: &CriticalManifold) -> Result<(Vec<f64>, Vec<DVector<f64>>), SublevelError> {
    match negative_direction_field(p, gamma) {
        Ok(frame) => Ok((frame.mu, frame.nu)),
        Err(ManifoldError::NonOrientableNormalLine { .. }) => Ok(negative_directions(p, gamma)?),
        Err(e) => Err(e.into()),
    }
}

/// Level at which sublevel sets are probed for the saddle `gamma`.
pub fn saddle_probe_level(p: &Potential, gamma: &CriticalManifold, g: &GridSampling) -> Result<f64, SublevelError> {
    let (mu, _) = negative_directions(p, gamma)?;
    Ok(gamma.critical_value(p)? - g.saddle_offset(max_abs(&mu)))
}

fn node_bbox(gamma: &CriticalManifold, r: f64) -> (Vec<f64>, Vec<f64>) {
    let d = gamma.ambient_dim;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for n in &gamma.nodes {
        for k in 0..d {
            lo[k] = lo[k].min(n.point[k] - r);
            hi[k] = hi[k].max(n.point[k] + r);
        }
    }
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Separation {
    NotLocallySeparating,
    LocallySeparatingNotSeparating,
    /// Global component ids on the `+nu` and `-nu` sides with one sample
    /// point in each.
    Separating { plus: usize, minus: usize, plus_point: Vec<f64>, minus_point: Vec<f64> },
}

/// Separation verdict together with the probe level and grid used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparationVerdict {
    pub separation: Separation,
    pub level: f64,
    pub resolution: Vec<usize>,
}

impl SeparationVerdict {
    pub fn is_separating(&self) -> bool {
        matches!(self.separation, Separation::Separating { .. })
    }

    pub fn name(&self) -> &'static str {
        match self.separation {
            Separation::NotLocallySeparating => "NotLocallySeparating",
            Separation::LocallySeparatingNotSeparating => "LocallySeparatingNotSeparating",
            Separation::Separating { .. } => "Separating",
        }
    }
}

pub fn classify_separating(p: &Potential, gamma: &CriticalManifold, g: &GridSampling, r: f64) -> Result<SeparationVerdict, SublevelError> {
    let level = saddle_probe_level(p, gamma, g)?;
    let local = local_structure(p, gamma, r, g)?;
    let separation = match local {
        LocalStructure::OneComponent => Separation::NotLocallySeparating,
        LocalStructure::TwoComponents { plus_point, minus_point, .. } => {
            let global = components(g, level);
            let a = global.label_at(g, &plus_point);
            let b = global.label_at(g, &minus_point);
            match (a, b) {
                (Some(a), Some(b)) if a != b => Separation::Separating { plus: a, minus: b, plus_point, minus_point },
                (Some(_), Some(_)) => Separation::LocallySeparatingNotSeparating,
                _ => {
                    return Err(SublevelError::OffsetOutside { name: gamma.name.clone(), point: plus_point });
                }
            }
        }
    };
    Ok(SeparationVerdict { separation, level, resolution: g.res.clone() })
}
