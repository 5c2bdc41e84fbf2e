//! Smooth potentials given by symbolic expressions, with exact derivatives.

pub mod expr;
pub mod scalar;

use crate::quadrature::halton;
use expr::{parse, EvalError, Expr, ParseError, VarSpace};
use nalgebra::{DMatrix, DVector};
use scalar::{Dual, DualVec, Scalar, MAX_VARS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dimension {0} is outside the supported range 1..={MAX_VARS}")]
    Dimension(usize),
    #[error("the potential is not radial")]
    NotRadial,
    #[error("invalid box: {0}")]
    InvalidBox(String),
}

/// Axis-aligned box `[lo, hi]` in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, PotentialError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(PotentialError::InvalidBox("corner dimensions differ".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(PotentialError::InvalidBox("each lower corner must be below the upper one".into()));
        }
        Ok(Bounds { lo, hi })
    }

    /// The cube `[-half, half]^d`.
    pub fn cube(d: usize, half: f64) -> Self {
        Bounds { lo: vec![-half; d], hi: vec![half; d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }
}

/// Value, gradient and Hessian at one point.
#[derive(Debug, Clone)]
pub struct Eval2 {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Potential {
    source: String,
    dim: usize,
    expr: Expr,
}

impl Potential {
    pub fn parse(source: &str, dim: usize) -> Result<Self, PotentialError> {
        if dim == 0 || dim > MAX_VARS {
            return Err(PotentialError::Dimension(dim));
        }
        let expr = parse(source, VarSpace::cartesian(dim))?;
        Ok(Potential { source: source.to_string(), dim, expr })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// True when the expression is written in terms of `r` only.
    pub fn is_radial(&self) -> bool {
        self.expr.uses_radius()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() != self.dim {
            return Err(EvalError::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.check_dim(x)?;
        let v = self.expr.eval(x)?;
        if !v.is_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok(v)
    }

    pub fn value_grad(&self, x: &[f64]) -> Result<(f64, DVector<f64>), EvalError> {
        self.check_dim(x)?;
        let vars: Vec<DualVec> = x.iter().enumerate().map(|(i, &v)| DualVec::variable(v, i)).collect();
        let r = self.expr.eval(&vars)?;
        if !r.all_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok((r.v, DVector::from_row_slice(&r.g[..self.dim])))
    }

    /// Value, gradient and Hessian. The Hessian is symmetrized so it is
    /// exactly symmetric.
    pub fn eval2(&self, x: &[f64]) -> Result<Eval2, EvalError> {
        self.check_dim(x)?;
        let d = self.dim;
        let mut hess = DMatrix::zeros(d, d);
        let mut value = 0.0;
        let mut grad = DVector::zeros(d);
        for j in 0..d {
            let vars: Vec<Dual<DualVec>> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let seed = if i == j { 1.0 } else { 0.0 };
                    Dual::new(DualVec::variable(v, i), DualVec::constant(seed))
                })
                .collect();
            let r = self.expr.eval(&vars)?;
            if !r.all_finite() {
                return Err(EvalError::NonFinite);
            }
            if j == 0 {
                value = r.re.v;
                grad = DVector::from_row_slice(&r.re.g[..d]);
            }
            for i in 0..d {
                hess[(i, j)] = r.eps.g[i];
            }
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        Ok(Eval2 { value, gradient: grad, hessian: sym })
    }

    /// Radial profile `F` with `f(x) = F(|x|)`.
    pub fn profile(&self) -> Result<Profile, PotentialError> {
        if !self.is_radial() {
            return Err(PotentialError::NotRadial);
        }
        Ok(Profile { expr: self.expr.clone(), source: self.source.clone() })
    }

    /// Samples the shell near the box boundary and checks the growth
    /// conditions at infinity.
    pub fn check_confinement(&self, bounds: &Bounds, opts: &ConfinementOptions) -> ConfinementReport {
        let d = self.dim;
        let widths = bounds.widths();
        let mut report = ConfinementReport {
            samples: 0,
            domain_errors: 0,
            min_value: f64::INFINITY,
            min_grad_norm: f64::INFINITY,
            max_hessian_ratio: 0.0,
            value_ok: true,
            gradient_ok: true,
            hessian_ok: true,
            passed: false,
        };
        let mut idx: u64 = 1;
        let max_draws = 1000 * opts.samples as u64;
        while report.samples < opts.samples && idx < max_draws {
            let u = halton(idx, d);
            idx += 1;
            let x: Vec<f64> = (0..d).map(|k| bounds.lo[k] + widths[k] * u[k]).collect();
            let in_shell = (0..d).any(|k| {
                let t = opts.shell_fraction * widths[k];
                x[k] - bounds.lo[k] < t || bounds.hi[k] - x[k] < t
            });
            if !in_shell {
                continue;
            }
            report.samples += 1;
            match self.eval2(&x) {
                Ok(e) => {
                    let g2 = e.gradient.norm_squared();
                    let hnorm = e.hessian.symmetric_eigenvalues().amax();
                    report.min_value = report.min_value.min(e.value);
                    report.min_grad_norm = report.min_grad_norm.min(g2.sqrt());
                    let ratio = if g2 > 0.0 { hnorm / g2 } else { f64::INFINITY };
                    report.max_hessian_ratio = report.max_hessian_ratio.max(ratio);
                    if e.value < -opts.constant {
                        report.value_ok = false;
                    }
                    if g2 < 1.0 / opts.constant {
                        report.gradient_ok = false;
                    }
                    if hnorm > opts.constant * g2 {
                        report.hessian_ok = false;
                    }
                }
                Err(_) => report.domain_errors += 1,
            }
        }
        report.passed = report.samples > 0
            && report.domain_errors == 0
            && report.value_ok
            && report.gradient_ok
            && report.hessian_ok;
        report
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfinementOptions {
    pub samples: usize,
    pub shell_fraction: f64,
    pub constant: f64,
}

impl Default for ConfinementOptions {
    fn default() -> Self {
        ConfinementOptions { samples: 4096, shell_fraction: 0.25, constant: 1e3 }
    }
}

/// Per-clause result of the confinement check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfinementReport {
    pub samples: usize,
    pub domain_errors: usize,
    pub min_value: f64,
    pub min_grad_norm: f64,
    /// Largest `|Hess f| / |grad f|^2` seen.
    pub max_hessian_ratio: f64,
    pub value_ok: bool,
    pub gradient_ok: bool,
    pub hessian_ok: bool,
    pub passed: bool,
}

/// One-dimensional profile `F(r)` of a radial potential.
#[derive(Debug, Clone)]
pub struct Profile {
    expr: Expr,
    source: String,
}

impl Profile {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn value(&self, r: f64) -> Result<f64, EvalError> {
        self.expr.eval_profile(r)
    }

    /// `(F, F', F'')` at `r`.
    pub fn derivatives(&self, r: f64) -> Result<(f64, f64, f64), EvalError> {
        let x = Dual::new(DualVec::variable(r, 0), DualVec::constant(1.0));
        let v = self.expr.eval_profile(x)?;
        if !v.all_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok((v.re.v, v.re.g[0], v.eps.g[0]))
    }

    /// The profile read as a potential on the real line.
    pub fn as_line_potential(&self) -> Potential {
        Potential { source: self.source.clone(), dim: 1, expr: self.expr.radius_to_coordinate() }
    }
}
