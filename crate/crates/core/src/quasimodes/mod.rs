//! Glued Gaussian quasimodes at leading order, Agmon distances, Rayleigh
//! quotients and the interaction matrix of the small eigenspace.

mod fmm;
mod interaction;

pub use fmm::{distance_to_mask, fast_marching};
pub use interaction::{
    interaction_csv, interaction_matrix, perturbed_diag_eigs, InteractionMatrix, PerturbedEigs, INTERACTION_CSV_HEADER,
    MAX_PROJECTION_LOSS,
};

use crate::kramers::{minimum_integral, KramersError};
use crate::labeling::{LabelingResult, SaddleRef};
use crate::manifolds::{negative_direction_field, CriticalManifold, ManifoldError, SaddleFrame};
use crate::potential::expr::EvalError;
use crate::potential::Potential;
use crate::quadrature::gauss_legendre;
use crate::spectral::{DiscreteWitten, FactoredOperator};
use crate::sublevel::{components, GridSampling};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuasimodeError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Kramers(#[from] KramersError),
    #[error("potential could not be evaluated: {0}")]
    Eval(#[from] EvalError),
    #[error("target `{0}` has no node inside the grid")]
    TargetOutside(String),
    #[error("fast marching did not reach {} cells of the requested region", missing.len())]
    Uncovered { missing: Vec<usize> },
    #[error("tube around `{0}` leaves the grid box")]
    TubeOutsideBox(String),
    #[error("tube around `{0}` has no boundary cells inside the grid")]
    EmptyTubeBoundary(String),
    #[error("plateau check failed at `{name}`: tau {tau:.4e} exceeds the feasible maximum {tau_max:.4e}")]
    Plateau { name: String, tau: f64, tau_max: f64 },
    #[error("cutoff support of `{minimum}` leaks into another sublevel component at {point:?}")]
    Leak { minimum: String, point: Vec<f64> },
    #[error("cannot tell which side of `{0}` faces the minimum's region")]
    SideUndetermined(String),
    #[error("quasimode and operator grids differ")]
    GridMismatch,
    #[error("projection onto the small eigenspace loses {loss:.3e} of quasimode {index}'s norm")]
    ProjectionLoss { index: usize, loss: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("minimum index {0} out of range")]
    OutOfRange(usize),
}

fn bump_edge(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Smooth monotone step: 0 for `x <= 0`, 1 for `x >= 1`.
pub fn smooth_step(x: f64) -> f64 {
    let a = bump_edge(x);
    let b = bump_edge(1.0 - x);
    if a + b == 0.0 {
        return if x >= 1.0 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

/// Even cutoff: 1 on `[-1, 1]`, supported in `[-2, 2]`.
pub fn zeta(t: f64) -> f64 {
    smooth_step(2.0 - t.abs())
}

const GL_POINTS: usize = 48;

/// `∫₀^ℓ ζ(s/τ) e^{-s²/2h} ds` for `ℓ >= 0`.
fn cut_gaussian_integral(ell: f64, tau: f64, h: f64) -> f64 {
    let core = (PI * h / 2.0).sqrt() * libm::erf(ell.min(tau) / (2.0 * h).sqrt());
    if ell <= tau {
        return core;
    }
    let top = ell.min(2.0 * tau);
    let (x, w) = gauss_legendre(GL_POINTS, tau, top);
    core + x.iter().zip(&w).map(|(s, w)| w * zeta(s / tau) * (-s * s / (2.0 * h)).exp()).sum::<f64>()
}

/// The normalization `C_Γ = ∫₀^∞ ζ(s/τ) e^{-s²/2h} ds`.
pub fn gluing_constant(tau: f64, h: f64) -> f64 {
    cut_gaussian_integral(2.0 * tau, tau, h)
}

/// `v(ℓ) = C_Γ⁻¹ ∫₀^ℓ ζ(s/τ) e^{-s²/2h} ds`, odd in `ℓ` and equal to
/// `±1` for `|ℓ| >= 2τ`.
pub fn v_profile(ell: f64, tau: f64, h: f64, c: f64) -> f64 {
    if ell.abs() >= 2.0 * tau {
        return ell.signum();
    }
    ell.signum() * (cut_gaussian_integral(ell.abs(), tau, h) / c).min(1.0)
}

/// Agmon distance `d_Ag(x, target)` for the metric `|∇f|² dx²`.
/// With `region`, fails when some of its cells are not reached.
pub fn agmon_distance(
    p: &Potential,
    target: &CriticalManifold,
    g: &GridSampling,
    region: Option<&[bool]>,
) -> Result<Vec<f64>, QuasimodeError> {
    let speed: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| p.value_grad(&g.center(i)).map(|(_, gr)| gr.norm()).unwrap_or(f64::NAN))
        .collect();
    let d = g.dim();
    let strides = g.strides();
    let (gx, gw) = gauss_legendre(4, 0.0, 1.0);
    let mut seeds = Vec::new();
    for node in &target.nodes {
        let Some(c) = g.cell_of(&node.point) else { continue };
        let coords = g.unravel(c);
        let mut offsets = vec![vec![]];
        for _ in 0..d {
            offsets = offsets
                .into_iter()
                .flat_map(|o: Vec<i64>| (-1..=1).map(move |s| [o.clone(), vec![s]].concat()))
                .collect();
        }
        for off in offsets {
            let mut cell = 0usize;
            let mut ok = true;
            for k in 0..d {
                let q = coords[k] as i64 + off[k];
                if q < 0 || q >= g.res[k] as i64 {
                    ok = false;
                    break;
                }
                cell += q as usize * strides[k];
            }
            if !ok || !speed[cell].is_finite() {
                continue;
            }
            let x = g.center(cell);
            let len = x.iter().zip(&node.point).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let mut integral = 0.0;
            for (t, w) in gx.iter().zip(&gw) {
                let y: Vec<f64> = node.point.iter().zip(&x).map(|(a, b)| a + t * (b - a)).collect();
                integral += w * p.value_grad(&y)?.1.norm();
            }
            seeds.push((cell, integral * len));
        }
    }
    if seeds.is_empty() {
        return Err(QuasimodeError::TargetOutside(target.name.clone()));
    }
    let phi = fast_marching(g, &speed, &seeds);
    if let Some(mask) = region {
        let missing: Vec<usize> = (0..g.len()).filter(|&i| mask[i] && !phi[i].is_finite()).collect();
        if !missing.is_empty() {
            return Err(QuasimodeError::Uncovered { missing });
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseModel {
    /// `ℓ₀(x) = √(-2μ(p)) ⟨x - p, ν(p)⟩` at the nearest node `p`.
    Quadratic,
    /// `ℓ₀ = ±√(2(φ - f + f(Γ)))` with `φ` the Agmon distance to `Γ`.
    AgmonBased,
}

#[derive(Debug, Clone)]
pub struct GluingOptions {
    pub mode: PhaseModel,
    pub tube_radius: f64,
    /// Explicit cutoff scale; when absent `tau_fraction` of the feasible
    /// maximum is used.
    pub tau: Option<f64>,
    pub tau_fraction: f64,
}

impl GluingOptions {
    pub fn new(mode: PhaseModel, tube_radius: f64) -> Self {
        GluingOptions { mode, tube_radius, tau: None, tau_fraction: 1.0 / 3.0 }
    }
}

/// Leading-order gluing data across one index-1 manifold.
#[derive(Debug, Clone)]
pub struct SaddleGluing {
    pub saddle: String,
    pub mode: PhaseModel,
    /// `f(Γ)`.
    pub value: f64,
    pub tau: f64,
    pub tau_max: f64,
    pub tube_radius: f64,
    pub tube: Vec<bool>,
    /// Tube cells with a face neighbor outside the tube.
    pub boundary: Vec<usize>,
    /// `ℓ₀` on tube cells, NaN elsewhere.
    pub ell0: Vec<f64>,
    slopes: Vec<f64>,
    points: Vec<Vec<f64>>,
    normals: Vec<DVector<f64>>,
}

impl SaddleGluing {
    /// Quadratic-model `ℓ₀` at an arbitrary point.
    pub fn quadratic_ell0(&self, x: &[f64]) -> f64 {
        let mut best = (f64::INFINITY, 0);
        for (j, p) in self.points.iter().enumerate() {
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            if d2 < best.0 {
                best = (d2, j);
            }
        }
        let j = best.1;
        let dot: f64 = self.normals[j].iter().zip(x.iter().zip(&self.points[j])).map(|(n, (a, b))| n * (a - b)).sum();
        self.slopes[j] * dot
    }

    pub fn c_gamma(&self, h: f64) -> f64 {
        gluing_constant(self.tau, h)
    }

    /// `v_Γ` on the tube, NaN elsewhere.
    pub fn v_values(&self, h: f64) -> Vec<f64> {
        let c = self.c_gamma(h);
        self.ell0.par_iter().map(|&l| if l.is_nan() { f64::NAN } else { v_profile(l, self.tau, h, c) }).collect()
    }

    /// Largest `|v_Γ ∓ 1|` over the plateau cells `±ℓ₀ >= 2τ`.
    pub fn plateau_error(&self, h: f64) -> f64 {
        let v = self.v_values(h);
        self.ell0
            .iter()
            .zip(&v)
            .filter(|(l, _)| l.abs() >= 2.0 * self.tau)
            .map(|(l, v)| (v - l.signum()).abs())
            .fold(0.0, f64::max)
    }

    fn central_gradient(&self, g: &GridSampling, strides: &[usize], cell: usize) -> Option<Vec<f64>> {
        let c = g.unravel(cell);
        let mut out = Vec::with_capacity(g.dim());
        for k in 0..g.dim() {
            if c[k] == 0 || c[k] + 1 >= g.res[k] {
                return None;
            }
            let (a, b) = (self.ell0[cell - strides[k]], self.ell0[cell + strides[k]]);
            if a.is_nan() || b.is_nan() {
                return None;
            }
            out.push((b - a) / (2.0 * g.spacing(k)));
        }
        Some(out)
    }

    /// Largest `|2∇f·∇ℓ₀ + |∇ℓ₀|²ℓ₀|` over interior tube cells within
    /// `radius` of the saddle.
    pub fn eikonal_residual(&self, p: &Potential, g: &GridSampling, gamma: &CriticalManifold, radius: f64) -> Result<f64, QuasimodeError> {
        let strides = g.strides();
        let mut worst = 0.0f64;
        for cell in 0..g.len() {
            if !self.tube[cell] || gamma.distance_to(&g.center(cell)) > radius {
                continue;
            }
            let Some(gl) = self.central_gradient(g, &strides, cell) else { continue };
            let (_, gf) = p.value_grad(&g.center(cell))?;
            let dot: f64 = gf.iter().zip(&gl).map(|(a, b)| a * b).sum();
            let sq: f64 = gl.iter().map(|v| v * v).sum();
            worst = worst.max((2.0 * dot + sq * self.ell0[cell]).abs());
        }
        Ok(worst)
    }

    /// Largest relative deviation of `|∇ℓ₀|²` from `-2μ` at the cells
    /// containing the nodes of `Γ`.
    pub fn gradient_on_gamma(&self, g: &GridSampling, gamma: &CriticalManifold) -> f64 {
        let strides = g.strides();
        let mut worst = 0.0f64;
        for (j, node) in gamma.nodes.iter().enumerate() {
            let Some(cell) = g.cell_of(&node.point) else { continue };
            let Some(gl) = self.central_gradient(g, &strides, cell) else { continue };
            let sq: f64 = gl.iter().map(|v| v * v).sum();
            let target = self.slopes[j] * self.slopes[j];
            worst = worst.max((sq / target - 1.0).abs());
        }
        worst
    }
}

/// Builds `ℓ₀` on a tube around `gamma` with `ν` oriented by `frame` and
/// multiplied by `sign`, so that `ℓ₀ > 0` on the side `sign·ν` points to.
pub fn build_gluing(
    p: &Potential,
    gamma: &CriticalManifold,
    frame: &SaddleFrame,
    sign: f64,
    g: &GridSampling,
    opts: &GluingOptions,
) -> Result<SaddleGluing, QuasimodeError> {
    if !frame.orientable {
        return Err(QuasimodeError::Precondition(format!("`{}` has no oriented normal field", gamma.name)));
    }
    let value = gamma.critical_value(p)?;
    let n = g.len();
    let tube: Vec<bool> = (0..n).into_par_iter().map(|i| gamma.distance_to(&g.center(i)) <= opts.tube_radius).collect();
    let strides = g.strides();
    let mut boundary = Vec::new();
    for cell in 0..n {
        if !tube[cell] {
            continue;
        }
        let c = g.unravel(cell);
        if (0..g.dim()).any(|k| c[k] == 0 || c[k] + 1 == g.res[k]) {
            return Err(QuasimodeError::TubeOutsideBox(gamma.name.clone()));
        }
        let mut edge = false;
        g.for_each_neighbor(cell, &strides, |nb| edge |= !tube[nb]);
        if edge {
            boundary.push(cell);
        }
    }
    if boundary.is_empty() {
        return Err(QuasimodeError::EmptyTubeBoundary(gamma.name.clone()));
    }
    let slopes: Vec<f64> = frame.mu.iter().map(|m| (-2.0 * m).sqrt()).collect();
    let normals: Vec<DVector<f64>> = frame.nu.iter().map(|v| v * sign).collect();
    let points: Vec<Vec<f64>> = gamma.nodes.iter().map(|nd| nd.point.clone()).collect();
    let mut gl = SaddleGluing {
        saddle: gamma.name.clone(),
        mode: opts.mode,
        value,
        tau: 0.0,
        tau_max: 0.0,
        tube_radius: opts.tube_radius,
        tube,
        boundary,
        ell0: Vec::new(),
        slopes,
        points,
        normals,
    };
    let quad: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| if gl.tube[i] { gl.quadratic_ell0(&g.center(i)) } else { f64::NAN })
        .collect();
    gl.ell0 = match opts.mode {
        PhaseModel::Quadratic => quad,
        PhaseModel::AgmonBased => {
            let phi = agmon_distance(p, gamma, g, Some(&gl.tube))?;
            (0..n)
                .map(|i| {
                    if gl.tube[i] {
                        let f = g.values[i];
                        quad[i].signum() * (2.0 * (phi[i] - f + value)).max(0.0).sqrt()
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        }
    };
    // Each boundary cell either sits on a plateau (|ℓ₀| >= 2τ) or lies
    // τ² above the saddle level, where the glued mass is negligible.
    gl.tau_max = gl
        .boundary
        .iter()
        .map(|&c| (gl.ell0[c].abs() / 2.0).max((g.values[c] - value).max(0.0).sqrt()))
        .fold(f64::INFINITY, f64::min);
    gl.tau = match opts.tau {
        Some(t) if t > gl.tau_max || !(t > 0.0) => {
            return Err(QuasimodeError::Plateau { name: gamma.name.clone(), tau: t, tau_max: gl.tau_max })
        }
        Some(t) => t,
        None => gl.tau_max * opts.tau_fraction,
    };
    if !(gl.tau > 0.0) {
        return Err(QuasimodeError::Plateau { name: gamma.name.clone(), tau: gl.tau, tau_max: gl.tau_max });
    }
    Ok(gl)
}

/// Grid vector of one quasimode `ψ_m`.
#[derive(Debug, Clone)]
pub struct QuasimodeField {
    pub minimum: usize,
    pub name: String,
    pub h: f64,
    pub res: Vec<usize>,
    pub values: Vec<f64>,
    /// `f(m)`.
    pub f_min: f64,
    /// Number of cells where the cutoff `θ_m` is positive.
    pub support: usize,
    pub global: bool,
    pub delta: f64,
    /// `∫ ψ² dx` approximated with the cell volume.
    pub norm_sq: f64,
}

impl QuasimodeField {
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.values.iter().map(|v| v / n).collect()
    }
}

fn cell_volume(g: &GridSampling) -> f64 {
    (0..g.dim()).map(|k| g.spacing(k)).product()
}

/// Cells of `E(m)`: the labeled component of `m` at its level.
pub fn region_mask(l: &LabelingResult, minimum: usize, g: &GridSampling) -> Result<Vec<bool>, QuasimodeError> {
    let label = l.minima.get(minimum).ok_or(QuasimodeError::OutOfRange(minimum))?;
    if l.resolution != g.res {
        return Err(QuasimodeError::GridMismatch);
    }
    match label.component {
        None => Ok(vec![true; g.len()]),
        Some(c) => {
            let map = components(g, l.levels[label.level].probe);
            Ok(map.labels.iter().map(|&x| x == c as i32).collect())
        }
    }
}

/// `ψ_m` on the grid from precomputed gluings for the saddles of `j(m)`.
pub fn build_psi(
    m: usize,
    l: &LabelingResult,
    gluings: &[&SaddleGluing],
    g: &GridSampling,
    h: f64,
    delta: f64,
) -> Result<QuasimodeField, QuasimodeError> {
    let label = l.minima.get(m).ok_or(QuasimodeError::OutOfRange(m))?;
    let f_min = label.value;
    let vol = cell_volume(g);
    let gibbs = |f: f64| (-(f - f_min) / h).exp();
    if label.component.is_none() {
        let values: Vec<f64> = g.values.par_iter().map(|&f| gibbs(f)).collect();
        let norm_sq = values.iter().map(|v| v * v).sum::<f64>() * vol;
        return Ok(QuasimodeField {
            minimum: m,
            name: label.name.clone(),
            h,
            res: g.res.clone(),
            values,
            f_min,
            support: g.len(),
            global: true,
            delta,
            norm_sq,
        });
    }
    let region = region_mask(l, m, g)?;
    let dist = distance_to_mask(g, &region);
    let theta: Vec<f64> = dist.iter().map(|&d| smooth_step((2.0 * delta - d) / delta)).collect();

    for gl in gluings {
        for &c in &gl.boundary {
            let f = g.values[c];
            if theta[c] > 0.0 && f - gl.value < gl.tau * gl.tau && gl.ell0[c] < 2.0 * gl.tau {
                return Err(QuasimodeError::Plateau { name: gl.saddle.clone(), tau: gl.tau, tau_max: gl.ell0[c].max(0.0) / 2.0 });
            }
        }
    }
    let probe = l.levels[label.level].probe;
    let map = components(g, probe);
    for c in 0..g.len() {
        if theta[c] > 0.0 && !region[c] && map.labels[c] >= 0 && !gluings.iter().any(|gl| gl.tube[c]) {
            return Err(QuasimodeError::Leak { minimum: label.name.clone(), point: g.center(c) });
        }
    }
    let vs: Vec<Vec<f64>> = gluings.iter().map(|gl| gl.v_values(h)).collect();
    let values: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|c| {
            if theta[c] == 0.0 {
                return 0.0;
            }
            let glue = gluings.iter().position(|gl| gl.tube[c]).map(|k| vs[k][c] + 1.0).unwrap_or(2.0);
            theta[c] * glue * gibbs(g.values[c])
        })
        .collect();
    let norm_sq = values.iter().map(|v| v * v).sum::<f64>() * vol;
    Ok(QuasimodeField {
        minimum: m,
        name: label.name.clone(),
        h,
        res: g.res.clone(),
        values,
        f_min,
        support: theta.iter().filter(|t| **t > 0.0).count(),
        global: false,
        delta,
        norm_sq,
    })
}

/// `⟨Δ_f ψ, ψ⟩ / ⟨ψ, ψ⟩` computed as `‖Aψ‖² / ‖ψ‖²`.
pub fn rayleigh(op: &DiscreteWitten, psi: &QuasimodeField) -> Result<f64, QuasimodeError> {
    if op.grid.res != psi.res || op.h != psi.h {
        return Err(QuasimodeError::GridMismatch);
    }
    Ok(op.rayleigh_quotient(&psi.values))
}

/// `‖Δ_f ψ‖² / ⟨Δ_f ψ, ψ⟩`, the residual-smallness proxy.
pub fn residual_ratio(op: &DiscreteWitten, psi: &QuasimodeField) -> Result<f64, QuasimodeError> {
    if op.grid.res != psi.res || op.h != psi.h {
        return Err(QuasimodeError::GridMismatch);
    }
    let dpsi = op.apply(&psi.values);
    let num: f64 = dpsi.iter().map(|v| v * v).sum();
    Ok(num / op.quadratic_form(&psi.values))
}

/// `c (πh)^{(d - d_m)/2} ∫_m |det Hess_⊥ f|^{-1/2}` with `c = 4` for a
/// glued quasimode and `c = 1` for the Gibbs state of the global minimum.
pub fn norm_prediction(p: &Potential, m: &CriticalManifold, h: f64, global: bool) -> Result<f64, QuasimodeError> {
    let j = minimum_integral(p, m)?;
    let c = if global { 1.0 } else { 4.0 };
    Ok(c * (PI * h).powf((p.dim() - m.dim) as f64 / 2.0) * j)
}

/// Smallest distance between node sets of distinct manifolds.
pub fn min_separation(manifolds: &[&CriticalManifold]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in manifolds.iter().enumerate() {
        for b in &manifolds[i + 1..] {
            for na in &a.nodes {
                best = best.min(b.distance_to(&na.point));
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct QuasimodeOptions {
    pub mode: PhaseModel,
    /// Cutoff width of `θ_m`; default ¼ of the minimal separation.
    pub delta: Option<f64>,
    /// Tube radius around each saddle; default `2.5 δ`.
    pub tube_radius: Option<f64>,
    pub tau: Option<f64>,
    pub tau_fraction: f64,
}

impl Default for QuasimodeOptions {
    fn default() -> Self {
        QuasimodeOptions { mode: PhaseModel::Quadratic, delta: None, tube_radius: None, tau: None, tau_fraction: 1.0 / 3.0 }
    }
}

/// All quasimodes of a labeled potential, one per minimum in labeling order.
#[derive(Debug, Clone)]
pub struct QuasimodeSet {
    pub fields: Vec<QuasimodeField>,
    /// `(minimum, gluing)` pairs.
    pub gluings: Vec<(usize, SaddleGluing)>,
    pub delta: f64,
    pub tube_radius: f64,
}

/// Builds every `ψ_m`. Saddles are indexed as in the labeling.
pub fn build_quasimodes(
    p: &Potential,
    minima: &[CriticalManifold],
    saddles: &[CriticalManifold],
    l: &LabelingResult,
    g: &GridSampling,
    h: f64,
    opts: &QuasimodeOptions,
) -> Result<QuasimodeSet, QuasimodeError> {
    let all: Vec<&CriticalManifold> = minima.iter().chain(saddles).collect();
    let delta = opts.delta.unwrap_or_else(|| min_separation(&all) / 4.0);
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(QuasimodeError::Precondition("cutoff width must be positive".into()));
    }
    let tube_radius = opts.tube_radius.unwrap_or(2.5 * delta);
    let built = (0..l.minima.len())
        .into_par_iter()
        .map(|m| -> Result<(QuasimodeField, Vec<SaddleGluing>), QuasimodeError> {
            let mut gls = Vec::new();
            if l.minima[m].component.is_some() {
                let region = region_mask(l, m, g)?;
                for r in &l.minima[m].saddles {
                    let SaddleRef::Saddle(s) = r else { continue };
                    let gamma = &saddles[*s];
                    let frame = negative_direction_field(p, gamma)?;
                    let sign = side_sign(gamma, &frame, &region, g, tube_radius / 2.0)?;
                    let gopts = GluingOptions { mode: opts.mode, tube_radius, tau: opts.tau, tau_fraction: opts.tau_fraction };
                    gls.push(build_gluing(p, gamma, &frame, sign, g, &gopts)?);
                }
            }
            let refs: Vec<&SaddleGluing> = gls.iter().collect();
            Ok((build_psi(m, l, &refs, g, h, delta)?, gls))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut fields = Vec::new();
    let mut gluings = Vec::new();
    for (m, (f, gls)) in built.into_iter().enumerate() {
        fields.push(f);
        gluings.extend(gls.into_iter().map(|gl| (m, gl)));
    }
    Ok(QuasimodeSet { fields, gluings, delta, tube_radius })
}

/// `+1` when `ν` points into `region` at the first node, `-1` when `-ν` does.
pub fn side_sign(gamma: &CriticalManifold, frame: &SaddleFrame, region: &[bool], g: &GridSampling, offset: f64) -> Result<f64, QuasimodeError> {
    let p0 = &gamma.nodes[0].point;
    let at = |s: f64| -> bool {
        let x: Vec<f64> = p0.iter().zip(frame.nu[0].iter()).map(|(a, v)| a + s * offset * v).collect();
        g.cell_of(&x).map(|c| region[c]).unwrap_or(false)
    };
    match (at(1.0), at(-1.0)) {
        (true, false) => Ok(1.0),
        (false, true) => Ok(-1.0),
        _ => Err(QuasimodeError::SideUndetermined(gamma.name.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::run_labeling;
    use crate::manifolds::Tolerances;
    use crate::potential::Bounds;
    use crate::spectral::{assemble_witten, smallest_eigs, EigOptions};
    use crate::sublevel::classify_separating;

    #[test]
    fn cutoff_and_step_shapes() {
        assert_eq!(zeta(0.5), 1.0);
        assert_eq!(zeta(-1.0), 1.0);
        assert_eq!(zeta(2.5), 0.0);
        assert!((zeta(1.5) - 0.5).abs() < 1e-12);
        assert!((zeta(1.3) - zeta(-1.3)).abs() < 1e-15);
        assert_eq!(smooth_step(-0.1), 0.0);
        assert_eq!(smooth_step(1.2), 1.0);
    }

    #[test]
    fn gluing_constant_matches_half_gaussian() {
        for &(tau, h) in &[(0.5, 0.05), (0.8, 0.1), (1.0, 0.2)] {
            let c = gluing_constant(tau, h);
            let err = (c / (PI * h / 2.0).sqrt() - 1.0).abs();
            assert!(err < (-tau * tau / (4.0 * h)).exp(), "{tau} {h} {err}");
        }
        let c = gluing_constant(0.4, 0.1);
        for &l in &[0.05, 0.3, 0.6, 0.9] {
            assert!((v_profile(l, 0.4, 0.1, c) + v_profile(-l, 0.4, 0.1, c)).abs() < 1e-15);
        }
        assert_eq!(v_profile(0.8, 0.4, 0.1, c), 1.0);
        assert!((v_profile(0.7999, 0.4, 0.1, c) - 1.0).abs() < 1e-12);
    }

    fn quartic_well() -> Potential {
        Potential::parse("(x1^2-1)^2/4", 1).unwrap()
    }

    #[test]
    fn agmon_distance_on_a_monotone_segment() {
        let p = quartic_well();
        let g = GridSampling::sample(&p, &Bounds::new(vec![0.9], vec![1.1]).unwrap(), &[400]).unwrap();
        let t = CriticalManifold::point("m", vec![1.0]).unwrap();
        let phi = agmon_distance(&p, &t, &g, None).unwrap();
        let f1 = 0.0;
        for i in 0..g.len() {
            let exact = (g.values[i] - f1).abs();
            assert!((phi[i] - exact).abs() < 1e-4, "{} {} {}", g.center(i)[0], phi[i], exact);
        }
    }

    #[test]
    fn agmon_distance_near_a_harmonic_minimum() {
        let p = Potential::parse("x1^2/2", 1).unwrap();
        let g = GridSampling::sample(&p, &Bounds::cube(1, 1.0), &[2000]).unwrap();
        let t = CriticalManifold::point("0", vec![0.0]).unwrap();
        let phi = agmon_distance(&p, &t, &g, None).unwrap();
        for i in 0..g.len() {
            assert!((phi[i] - g.values[i]).abs() < 1e-3);
        }
        let dw = Potential::parse("x1^4/4 - x1^2/2", 1).unwrap();
        let g = GridSampling::sample(&dw, &Bounds::cube(1, 1.0), &[2001]).unwrap();
        let phi = agmon_distance(&dw, &t, &g, None).unwrap();
        let (a, b) = (g.cell_of(&[0.3]).unwrap(), g.cell_of(&[-0.3]).unwrap());
        assert!((phi[a] - phi[b]).abs() < 1e-12);
    }

    fn tilted() -> Potential {
        Potential::parse("x1^4/4 - x1^2/2 + 0.1*x1", 1).unwrap()
    }

    fn dw_setup(p: &Potential, cells: usize) -> (Vec<CriticalManifold>, Vec<CriticalManifold>, LabelingResult, GridSampling) {
        let tol = Tolerances::default();
        let roots: Vec<f64> = [-1.0, 0.0, 1.0]
            .iter()
            .map(|&x0: &f64| {
                let mut x = x0;
                for _ in 0..50 {
                    x -= (x * x * x - x + 0.1) / (3.0 * x * x - 1.0);
                }
                x
            })
            .collect();
        let minima = vec![
            CriticalManifold::point("left", vec![roots[0]]).unwrap().verified(p, &tol).unwrap(),
            CriticalManifold::point("right", vec![roots[2]]).unwrap().verified(p, &tol).unwrap(),
        ];
        let saddle = CriticalManifold::point("s", vec![roots[1]]).unwrap().verified(p, &tol).unwrap();
        let g = GridSampling::sample(p, &Bounds::cube(1, 2.5), &[cells]).unwrap();
        let verdict = classify_separating(p, &saddle, &g, 0.3).unwrap();
        let cs = crate::labeling::ClassifiedSaddle { manifold: saddle.clone(), verdict };
        let l = run_labeling(p, &minima, &[cs], &g).unwrap();
        (minima, vec![saddle], l, g)
    }

    #[test]
    fn quadratic_gluing_is_scaled_coordinate() {
        let p = quartic_well();
        let gamma = CriticalManifold::point("0", vec![0.0]).unwrap();
        let frame = negative_direction_field(&p, &gamma).unwrap();
        let g = GridSampling::sample(&p, &Bounds::cube(1, 2.0), &[400]).unwrap();
        let opts = GluingOptions { tau: Some(0.1), ..GluingOptions::new(PhaseModel::Quadratic, 0.5) };
        let gl = build_gluing(&p, &gamma, &frame, 1.0, &g, &opts).unwrap();
        for c in 0..g.len() {
            if gl.tube[c] {
                let x = g.center(c)[0];
                assert!((gl.ell0[c] - 2f64.sqrt() * x).abs() < 1e-12);
            }
        }
        assert_eq!(gl.quadratic_ell0(&[0.0]), 0.0);
        assert!(gl.gradient_on_gamma(&g, &gamma) < 1e-10);
        assert!(gl.plateau_error(0.1) < (-gl.tau * gl.tau / 0.4).exp());
        let too_big = GluingOptions { tau: Some(1.0), ..opts };
        assert!(matches!(build_gluing(&p, &gamma, &frame, 1.0, &g, &too_big), Err(QuasimodeError::Plateau { .. })));
    }

    #[test]
    fn agmon_phase_matches_quadratic_near_the_saddle() {
        let p = quartic_well();
        let gamma = CriticalManifold::point("0", vec![0.0]).unwrap();
        let frame = negative_direction_field(&p, &gamma).unwrap();
        let g = GridSampling::sample(&p, &Bounds::cube(1, 2.0), &[8000]).unwrap();
        let q = build_gluing(&p, &gamma, &frame, 1.0, &g, &GluingOptions::new(PhaseModel::Quadratic, 0.6)).unwrap();
        let a = build_gluing(&p, &gamma, &frame, 1.0, &g, &GluingOptions::new(PhaseModel::AgmonBased, 0.6)).unwrap();
        for k in 1..=10 {
            let x = 0.03 * k as f64;
            let c = g.cell_of(&[x]).unwrap();
            let r = g.center(c)[0];
            assert!((q.ell0[c] - a.ell0[c]).abs() < 2.0 * r * r + 2e-3, "{r} {} {}", q.ell0[c], a.ell0[c]);
        }
        assert!(a.gradient_on_gamma(&g, &gamma) < 0.05);
        assert!(a.eikonal_residual(&p, &g, &gamma, 0.4).unwrap() < 5e-3);
    }

    #[test]
    fn global_minimum_is_gibbs_and_right_minimum_is_glued() {
        let p = tilted();
        let (minima, saddles, l, g) = dw_setup(&p, 4000);
        let h = 0.1;
        let set = build_quasimodes(&p, &minima, &saddles, &l, &g, h, &QuasimodeOptions::default()).unwrap();
        let global = &set.fields[l.global_minimum];
        assert!(global.global);
        for (v, f) in global.values.iter().zip(&g.values) {
            assert!((v - (-(f - global.f_min) / h).exp()).abs() < 1e-15);
        }
        let right = &set.fields[1];
        let fm = right.f_min;
        let deep = g.cell_of(&[0.95]).unwrap();
        assert!((right.values[deep] - 2.0 * (-(g.values[deep] - fm) / h).exp()).abs() < 1e-12);
        assert_eq!(right.values[g.cell_of(&[-1.0]).unwrap()], 0.0);
        assert!(right.values.iter().all(|v| *v >= 0.0));
        let op = assemble_witten(&p, &g.bounds, &g.res, h, true).unwrap();
        let mu = rayleigh(&op, global).unwrap();
        assert!(mu < 1e-12);
        let s = smallest_eigs(&op, 2, &EigOptions::default()).unwrap();
        let mu = rayleigh(&op, right).unwrap();
        assert!(mu > 0.5 * s.values[1], "{mu} {}", s.values[1]);
    }

    #[test]
    fn norm_prediction_at_small_h() {
        let p = tilted();
        let (minima, saddles, l, g) = dw_setup(&p, 4000);
        let h = 0.05;
        let set = build_quasimodes(&p, &minima, &saddles, &l, &g, h, &QuasimodeOptions::default()).unwrap();
        for (i, f) in set.fields.iter().enumerate() {
            let pred = norm_prediction(&p, &minima[i], h, f.global).unwrap();
            assert!((f.norm_sq / pred - 1.0).abs() < 0.1, "{} {}", f.norm_sq, pred);
        }
    }
}
