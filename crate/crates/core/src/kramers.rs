//! Eyring-Kramers predictions for the exponentially small eigenvalues.

use crate::labeling::{LabelingResult, RadialLabeling, SaddleRef};
use crate::manifolds::{transversal_hessian, CriticalManifold, ManifoldError};
use crate::potential::expr::EvalError;
use crate::potential::{Potential, Profile};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KramersError {
    #[error("minimum `{0}` is the global minimum and has no finite barrier")]
    GlobalMinimum(String),
    #[error("saddle set of `{0}` is empty")]
    EmptySaddleSet(String),
    #[error("transversal Hessian determinant of `{name}` vanishes at node {node}")]
    Degenerate { name: String, node: usize },
    #[error("`{name}` is not index {expected} at node {node}")]
    WrongIndex { name: String, expected: usize, node: usize },
    #[error("h must be positive, got {0}")]
    NonPositiveH(f64),
    #[error("the center is not a minimum of the profile (F''(0) = {0})")]
    CenterNotMinimum(f64),
    #[error("predictions refer to different minima (barriers {0} and {1})")]
    Mismatched(f64, f64),
    #[error("index {0} out of range")]
    OutOfRange(usize),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleContribution {
    pub saddle: String,
    pub dim: usize,
    /// Integral of `|mu| |det Hess_perp|^{-1/2}` over the saddle.
    pub integral: f64,
    /// Whether the saddle has the maximal dimension and enters D(m).
    pub included: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KramersPrediction {
    pub minimum: String,
    pub barrier: f64,
    pub exponent: f64,
    pub prefactor: f64,
    pub contributions: Vec<SaddleContribution>,
    /// Integral of `|det Hess_perp|^{-1/2}` over the minimum.
    pub denominator: f64,
    pub minimum_dim: usize,
    pub max_saddle_dim: usize,
    /// Set when the saddle dimensions in j(m) have mixed parity, so the
    /// correction series runs in half-integer powers of h.
    pub half_integer_expansion: bool,
}

fn mixed_parity(dims: &[usize]) -> bool {
    dims.iter().any(|d| d % 2 == 0) && dims.iter().any(|d| d % 2 == 1)
}

fn assemble(
    minimum: String,
    barrier: f64,
    minimum_dim: usize,
    denominator: f64,
    mut contributions: Vec<SaddleContribution>,
) -> KramersPrediction {
    let dims: Vec<usize> = contributions.iter().map(|c| c.dim).collect();
    let max_saddle_dim = dims.iter().copied().max().unwrap_or(0);
    let power = (minimum_dim as f64 - max_saddle_dim as f64) / 2.0;
    let mut prefactor = 0.0;
    for c in &mut contributions {
        c.included = c.dim == max_saddle_dim;
        if c.included {
            prefactor += PI.powf(power - 1.0) * c.integral / denominator;
        }
    }
    KramersPrediction {
        minimum,
        barrier,
        exponent: power + 1.0,
        prefactor,
        contributions,
        denominator,
        minimum_dim,
        max_saddle_dim,
        half_integer_expansion: mixed_parity(&dims),
    }
}

/// Quadrature of `|det Hess_perp|^{-1/2}` over a minimal manifold.
pub fn minimum_integral(p: &Potential, m: &CriticalManifold) -> Result<f64, KramersError> {
    let mut s = 0.0;
    for (i, node) in m.nodes.iter().enumerate() {
        let th = transversal_hessian(p, m, i)?;
        if th.eigenvalues.iter().any(|v| *v < 0.0) {
            return Err(KramersError::WrongIndex { name: m.name.clone(), expected: 0, node: i });
        }
        if !(th.det.abs() > 0.0) {
            return Err(KramersError::Degenerate { name: m.name.clone(), node: i });
        }
        s += node.weight / th.det.abs().sqrt();
    }
    Ok(s)
}

/// Quadrature of `|mu| |det Hess_perp|^{-1/2}` over an index-1 manifold.
pub fn saddle_integral(p: &Potential, gamma: &CriticalManifold) -> Result<f64, KramersError> {
    let mut s = 0.0;
    for (i, node) in gamma.nodes.iter().enumerate() {
        let th = transversal_hessian(p, gamma, i)?;
        let neg = th.eigenvalues.iter().filter(|v| **v < 0.0).count();
        if neg != 1 {
            return Err(KramersError::WrongIndex { name: gamma.name.clone(), expected: 1, node: i });
        }
        if !(th.det.abs() > 0.0) {
            return Err(KramersError::Degenerate { name: gamma.name.clone(), node: i });
        }
        s += node.weight * th.eigenvalues[0].abs() / th.det.abs().sqrt();
    }
    Ok(s)
}

/// Prediction for minimum `m`, with `saddles` indexed as in the labeling.
pub fn prefactor(
    p: &Potential,
    m: usize,
    minima: &[CriticalManifold],
    saddles: &[CriticalManifold],
    l: &LabelingResult,
) -> Result<KramersPrediction, KramersError> {
    let lab = l.minima.get(m).ok_or(KramersError::OutOfRange(m))?;
    let man = minima.get(m).ok_or(KramersError::OutOfRange(m))?;
    if lab.barrier.is_infinite() || lab.saddles.contains(&SaddleRef::Fictive) {
        return Err(KramersError::GlobalMinimum(lab.name.clone()));
    }
    if lab.saddles.is_empty() {
        return Err(KramersError::EmptySaddleSet(lab.name.clone()));
    }
    let denominator = minimum_integral(p, man)?;
    let mut contributions = Vec::new();
    for r in &lab.saddles {
        if let SaddleRef::Saddle(k) = r {
            let gamma = saddles.get(*k).ok_or(KramersError::OutOfRange(*k))?;
            contributions.push(SaddleContribution {
                saddle: gamma.name.clone(),
                dim: gamma.dim,
                integral: saddle_integral(p, gamma)?,
                included: false,
            });
        }
    }
    Ok(assemble(lab.name.clone(), lab.barrier, man.dim, denominator, contributions))
}

/// `D h^e exp(-2S/h)`, clamped to 0 once `2S/h > 700`.
pub fn evaluate(pr: &KramersPrediction, h: f64) -> Result<f64, KramersError> {
    if !(h > 0.0) {
        return Err(KramersError::NonPositiveH(h));
    }
    let arg = 2.0 * pr.barrier / h;
    if arg > 700.0 {
        return Ok(0.0);
    }
    Ok(pr.prefactor * h.powf(pr.exponent) * (-arg).exp())
}

/// Area of the unit sphere in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / libm::tgamma(d as f64 / 2.0)
}

/// Closed-form prediction for a radial potential in dimension `d` from its
/// profile labeling.
pub fn radial_predict(profile: &Profile, d: usize, rl: &RadialLabeling, minimum: usize) -> Result<KramersPrediction, KramersError> {
    let lab = rl.result.minima.get(minimum).ok_or(KramersError::OutOfRange(minimum))?;
    if lab.barrier.is_infinite() {
        return Err(KramersError::GlobalMinimum(lab.name.clone()));
    }
    let rm = rl.minima_radii[minimum];
    let (_, _, fm2) = profile.derivatives(rm)?;
    let area = unit_sphere_area(d);
    let dd = d as f64;
    let center = rm == 0.0;
    if center && !(fm2 > 0.0) {
        return Err(KramersError::CenterNotMinimum(fm2));
    }
    let mut contributions = Vec::new();
    let mut direct = 0.0;
    for r in &lab.saddles {
        let SaddleRef::Saddle(k) = r else { continue };
        let s = rl.saddle_radii[*k];
        let (_, _, fs2) = profile.derivatives(s)?;
        contributions.push(SaddleContribution {
            saddle: rl.result.saddle_names[*k].clone(),
            dim: d - 1,
            integral: area * s.powi(d as i32 - 1) * fs2.abs().sqrt(),
            included: true,
        });
        direct += if center {
            area * s.powi(d as i32 - 1) * PI.powf(-(1.0 + dd) / 2.0) * fm2.powf(dd / 2.0) * fs2.abs().sqrt()
        } else {
            s.powi(d as i32 - 1) / (PI * rm.powi(d as i32 - 1)) * (fm2 * fs2.abs()).sqrt()
        };
    }
    if contributions.is_empty() {
        return Err(KramersError::EmptySaddleSet(lab.name.clone()));
    }
    let (minimum_dim, denominator) =
        if center { (0, fm2.powf(-dd / 2.0)) } else { (d - 1, area * rm.powi(d as i32 - 1) / fm2.sqrt()) };
    let exponent = if center { (3.0 - dd) / 2.0 } else { 1.0 };
    Ok(KramersPrediction {
        minimum: lab.name.clone(),
        barrier: lab.barrier,
        exponent,
        prefactor: direct,
        contributions,
        denominator,
        minimum_dim,
        max_saddle_dim: d - 1,
        half_integer_expansion: false,
    })
}

/// One-dimensional Eyring-Kramers prediction for the profile read on the
/// half-line, the formal comparison object for radial problems.
pub fn profile_line_predict(profile: &Profile, rl: &RadialLabeling, minimum: usize) -> Result<KramersPrediction, KramersError> {
    let lab = rl.result.minima.get(minimum).ok_or(KramersError::OutOfRange(minimum))?;
    if lab.barrier.is_infinite() {
        return Err(KramersError::GlobalMinimum(lab.name.clone()));
    }
    let (_, _, fm2) = profile.derivatives(rl.minima_radii[minimum])?;
    let mut contributions = Vec::new();
    for r in &lab.saddles {
        let SaddleRef::Saddle(k) = r else { continue };
        let (_, _, fs2) = profile.derivatives(rl.saddle_radii[*k])?;
        contributions.push(SaddleContribution {
            saddle: rl.result.saddle_names[*k].clone(),
            dim: 0,
            integral: fs2.abs().sqrt(),
            included: false,
        });
    }
    if contributions.is_empty() {
        return Err(KramersError::EmptySaddleSet(lab.name.clone()));
    }
    Ok(assemble(lab.name.clone(), lab.barrier, 0, 1.0 / fm2.sqrt(), contributions))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfileComparison {
    /// `D_line / D_radial`.
    pub prefactor_ratio: f64,
    /// `e_line - e_radial`.
    pub exponent_gap: f64,
}

/// Ratio of the one-dimensional profile prediction to the radial one.
pub fn compare_1d_profile(radial: &KramersPrediction, line: &KramersPrediction) -> Result<ProfileComparison, KramersError> {
    let (a, b) = (radial.barrier, line.barrier);
    if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
        return Err(KramersError::Mismatched(a, b));
    }
    Ok(ProfileComparison { prefactor_ratio: line.prefactor / radial.prefactor, exponent_gap: line.exponent - radial.exponent })
}

/// Prediction table with one `lambda` column per requested `h`.
pub fn predictions_csv(preds: &[KramersPrediction], hs: &[f64]) -> Result<String, KramersError> {
    let mut s = String::from("minimum,S,exponent,D,d_m,d_max,half_integer,saddles");
    for h in hs {
        let _ = write!(s, ",lambda_h={h}");
    }
    s.push('\n');
    for p in preds {
        let breakdown: Vec<String> =
            p.contributions.iter().map(|c| format!("{}:{}:{:.12e}:{}", c.saddle, c.dim, c.integral, c.included)).collect();
        let _ = write!(
            s,
            "{},{:.15e},{},{:.15e},{},{},{},{}",
            p.minimum,
            p.barrier,
            p.exponent,
            p.prefactor,
            p.minimum_dim,
            p.max_saddle_dim,
            p.half_integer_expansion,
            breakdown.join(";")
        );
        for &h in hs {
            let _ = write!(s, ",{:.15e}", evaluate(p, h)?);
        }
        s.push('\n');
    }
    Ok(s)
}
