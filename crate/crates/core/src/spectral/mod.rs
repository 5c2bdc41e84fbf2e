//! Discrete Witten Laplacians in factored form `AᵀA` and their smallest
//! eigenvalues.
//!
//! `A` is the twisted gradient `h∇ + ∇f` discretized from cell centers to
//! faces as `(h/dx)·e^{-f_face/h}(e^{f_hi/h}u_hi - e^{f_lo/h}u_lo)`, so the
//! sampled Gibbs vector lies in its kernel up to boundary effects and the
//! tiny eigenvalues are recovered as squared singular values of `A`.

mod band;

pub use band::{BandCholesky, SymBand};

use crate::potential::expr::EvalError;
use crate::potential::{Bounds, Potential, Profile};
use crate::sublevel::GridSampling;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("grid too coarse: spacing {spacing:.4e} exceeds sqrt(h)/8 = {limit:.4e} on axis {axis}")]
    TooCoarse { axis: usize, spacing: f64, limit: f64 },
    #[error("full-grid operators support dimensions 1 to 3, got {0}")]
    Dimension(usize),
    #[error("the radial reduction needs d >= 2, got {0}")]
    RadialDimension(usize),
    #[error("h must be positive and finite, got {0}")]
    NonPositiveH(f64),
    #[error("grid needs at least 2 cells per axis matching the box dimension")]
    Resolution,
    #[error("potential could not be evaluated at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
    #[error("requested {k} eigenvalues from an operator of size {n}")]
    TooMany { k: usize, n: usize },
    #[error("eigensolver did not converge after {iterations} iterations (last change {change:.3e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("shifted Cholesky factorization failed up to shift {0:.3e}")]
    Factorization(f64),
    #[error("vector length {got} does not match operator size {expected}")]
    Mismatch { expected: usize, got: usize },
    #[error("ill-conditioned: f changes by {jump:.1}h over half a cell (limit {limit}h); shrink the box or refine the grid")]
    IllConditioned { jump: f64, limit: f64 },
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Face {
    lo: u32,
    hi: u32,
    c_lo: f64,
    c_hi: f64,
}

/// Sparse two-point factor: each row (face) couples at most two unknowns.
#[derive(Debug, Clone)]
pub struct FaceFactor {
    n: usize,
    band: usize,
    faces: Vec<Face>,
}

impl FaceFactor {
    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.faces.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.band
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.faces
            .par_iter()
            .map(|f| {
                let mut v = 0.0;
                if f.hi != NONE {
                    v += f.c_hi * x[f.hi as usize];
                }
                if f.lo != NONE {
                    v -= f.c_lo * x[f.lo as usize];
                }
                v
            })
            .collect()
    }

    pub fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.faces.len());
        let mut out = vec![0.0; self.n];
        for (f, &v) in self.faces.iter().zip(y) {
            if f.hi != NONE {
                out[f.hi as usize] += f.c_hi * v;
            }
            if f.lo != NONE {
                out[f.lo as usize] -= f.c_lo * v;
            }
        }
        out
    }

    /// `AᵀA` in band storage.
    pub fn gram(&self) -> SymBand {
        let mut m = SymBand::zeros(self.n, self.band);
        for f in &self.faces {
            if f.hi != NONE {
                m.add(f.hi as usize, f.hi as usize, f.c_hi * f.c_hi);
            }
            if f.lo != NONE {
                m.add(f.lo as usize, f.lo as usize, f.c_lo * f.c_lo);
            }
            if f.hi != NONE && f.lo != NONE {
                m.add(f.hi as usize, f.lo as usize, -f.c_hi * f.c_lo);
            }
        }
        m
    }

    fn dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.faces.len().max(self.n), self.n);
        for (r, f) in self.faces.iter().enumerate() {
            if f.hi != NONE {
                a[(r, f.hi as usize)] += f.c_hi;
            }
            if f.lo != NONE {
                a[(r, f.lo as usize)] -= f.c_lo;
            }
        }
        a
    }
}

/// An operator `AᵀA` known through its factor.
pub trait FactoredOperator: Sync {
    fn factor(&self) -> &FaceFactor;
    fn h(&self) -> f64;
    /// Short grid description for reports.
    fn grid_label(&self) -> String;
    /// Sampled `e^{-(f - min f)/h}` in the operator's unknowns.
    fn gibbs_vector(&self) -> Vec<f64>;
    /// Minimum of `f - min f` over the Dirichlet boundary.
    fn boundary_excess(&self) -> f64;

    fn size(&self) -> usize {
        self.factor().cols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let f = self.factor();
        f.apply_t(&f.apply(x))
    }

    /// `‖Ax‖²`.
    fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.factor().apply(x).iter().map(|v| v * v).sum()
    }

    fn rayleigh_quotient(&self, x: &[f64]) -> f64 {
        self.quadratic_form(x) / x.iter().map(|v| v * v).sum::<f64>()
    }

    fn norm_estimate(&self) -> f64 {
        self.factor().gram().gershgorin()
    }

    /// Warning when the box is too small for the barriers being measured:
    /// the boundary should sit `2 S_max + 5 h ln(1/h)` above the global minimum.
    fn truncation_warning(&self, s_max: f64) -> Option<String> {
        let h = self.h();
        let need = 2.0 * s_max + 5.0 * h * (1.0 / h).ln().max(0.0);
        let have = self.boundary_excess();
        (have < need).then(|| format!("truncation: boundary rises {have:.4} above the minimum, {need:.4} needed"))
    }
}

/// Full-grid Witten Laplacian on a box with homogeneous Dirichlet data.
#[derive(Debug, Clone)]
pub struct DiscreteWitten {
    pub grid: GridSampling,
    pub h: f64,
    pub warnings: Vec<String>,
    factor: FaceFactor,
    boundary_min: f64,
}

/// Fewer than this many cells per `√h` makes the grid too coarse.
pub const CELLS_PER_SQRT_H: f64 = 8.0;

/// Largest `|f(cell) - f(face)| / h` before the face weights `e^{Δf/h}`
/// push the reliability floor above the small eigenvalues.
pub const MAX_HALF_CELL_JUMP: f64 = 10.0;

fn check_h(h: f64) -> Result<(), SpectralError> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(SpectralError::NonPositiveH(h))
    }
}

pub fn assemble_witten(p: &Potential, bounds: &Bounds, res: &[usize], h: f64, strict: bool) -> Result<DiscreteWitten, SpectralError> {
    check_h(h)?;
    let d = p.dim();
    if !(1..=3).contains(&d) {
        return Err(SpectralError::Dimension(d));
    }
    if res.len() != d || bounds.dim() != d || res.iter().any(|&n| n < 2) {
        return Err(SpectralError::Resolution);
    }
    let eval = |x: Vec<f64>| p.value(&x).map_err(|source| SpectralError::Eval { point: x, source });
    let grid = GridSampling { bounds: bounds.clone(), res: res.to_vec(), values: Vec::new() };
    let n = grid.len();
    let values = (0..n).into_par_iter().map(|i| eval(grid.center(i))).collect::<Result<Vec<f64>, _>>()?;
    let grid = GridSampling { values, ..grid };

    let mut warnings = Vec::new();
    let limit = h.sqrt() / CELLS_PER_SQRT_H;
    for k in 0..d {
        let dx = grid.spacing(k);
        if dx > limit * (1.0 + 1e-12) {
            if strict {
                return Err(SpectralError::TooCoarse { axis: k, spacing: dx, limit });
            }
            warnings.push(format!("grid too coarse on axis {k}: spacing {dx:.4e} > sqrt(h)/8 = {limit:.4e}"));
        }
    }

    let strides = grid.strides();
    let fmin = grid.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut faces = Vec::new();
    let mut boundary_min = f64::INFINITY;
    let mut max_jump = 0.0f64;
    for k in 0..d {
        let mut dims = res.to_vec();
        dims[k] += 1;
        let count: usize = dims.iter().product();
        let dx = grid.spacing(k);
        let built = (0..count)
            .into_par_iter()
            .map(|fi| {
                let mut rem = fi;
                let mut coords = vec![0usize; d];
                for (a, c) in coords.iter_mut().enumerate() {
                    *c = rem % dims[a];
                    rem /= dims[a];
                }
                let q = coords[k];
                let mut x = vec![0.0; d];
                for a in 0..d {
                    x[a] = if a == k {
                        bounds.lo[a] + q as f64 * dx
                    } else {
                        bounds.lo[a] + (coords[a] as f64 + 0.5) * grid.spacing(a)
                    };
                }
                let f_face = eval(x)?;
                let base: usize = (0..d).filter(|&a| a != k).map(|a| coords[a] * strides[a]).sum();
                let c = h / dx;
                let (mut lo, mut hi, mut c_lo, mut c_hi) = (NONE, NONE, 0.0, 0.0);
                if q >= 1 {
                    let i = base + (q - 1) * strides[k];
                    lo = i as u32;
                    c_lo = c * ((grid.values[i] - f_face) / h).exp();
                }
                if q < res[k] {
                    let i = base + q * strides[k];
                    hi = i as u32;
                    c_hi = c * ((grid.values[i] - f_face) / h).exp();
                }
                let boundary = q == 0 || q == res[k];
                let jump = [lo, hi]
                    .iter()
                    .filter(|&&i| i != NONE)
                    .map(|&i| (grid.values[i as usize] - f_face).abs() / h)
                    .fold(0.0, f64::max);
                Ok((Face { lo, hi, c_lo, c_hi }, if boundary { f_face } else { f64::INFINITY }, jump))
            })
            .collect::<Result<Vec<_>, SpectralError>>()?;
        for (f, b, j) in built {
            boundary_min = boundary_min.min(b);
            max_jump = max_jump.max(j);
            faces.push(f);
        }
    }
    if max_jump > MAX_HALF_CELL_JUMP {
        if strict {
            return Err(SpectralError::IllConditioned { jump: max_jump, limit: MAX_HALF_CELL_JUMP });
        }
        warnings.push(format!("ill-conditioned: f changes by {max_jump:.1}h over half a cell (limit {MAX_HALF_CELL_JUMP}h)"));
    }
    let band = if d == 1 { 1 } else { strides[d - 1] };
    Ok(DiscreteWitten { grid, h, warnings, factor: FaceFactor { n, band, faces }, boundary_min: boundary_min - fmin })
}

impl DiscreteWitten {
    pub fn res(&self) -> &[usize] {
        &self.grid.res
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.grid.dim()).map(|k| self.grid.spacing(k)).product()
    }
}

impl FactoredOperator for DiscreteWitten {
    fn factor(&self) -> &FaceFactor {
        &self.factor
    }

    fn h(&self) -> f64 {
        self.h
    }

    fn grid_label(&self) -> String {
        self.grid.res.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
    }

    fn gibbs_vector(&self) -> Vec<f64> {
        let fmin = self.grid.values.iter().cloned().fold(f64::INFINITY, f64::min);
        self.grid.values.iter().map(|f| (-(f - fmin) / self.h).exp()).collect()
    }

    fn boundary_excess(&self) -> f64 {
        self.boundary_min
    }
}

/// Radial sector of the Witten Laplacian for `f(x) = F(|x|)` on the ball
/// of radius `R`, in the symmetrized unknowns `√w_i u_i` where `w_i` are
/// the shell volumes (up to the sphere area).
#[derive(Debug, Clone)]
pub struct RadialWitten {
    pub d: usize,
    pub r_max: f64,
    pub h: f64,
    pub dr: f64,
    /// Cell centers.
    pub radii: Vec<f64>,
    /// Shell volumes divided by the unit sphere area.
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
    factor: FaceFactor,
    boundary_value: f64,
}

pub fn assemble_radial(profile: &Profile, d: usize, r_max: f64, cells: usize, h: f64) -> Result<RadialWitten, SpectralError> {
    check_h(h)?;
    if d < 2 {
        return Err(SpectralError::RadialDimension(d));
    }
    if cells < 2 || !(r_max > 0.0) {
        return Err(SpectralError::Resolution);
    }
    let eval = |r: f64| profile.value(r).map_err(|source| SpectralError::Eval { point: vec![r], source });
    let dr = r_max / cells as f64;
    let df = d as f64;
    let radii: Vec<f64> = (0..cells).map(|i| (i as f64 + 0.5) * dr).collect();
    let weights: Vec<f64> = (0..cells)
        .map(|i| (((i + 1) as f64 * dr).powi(d as i32) - (i as f64 * dr).powi(d as i32)) / df)
        .collect();
    let values = radii.iter().map(|&r| eval(r)).collect::<Result<Vec<f64>, _>>()?;
    let mut warnings = Vec::new();
    let limit = h.sqrt() / CELLS_PER_SQRT_H;
    if dr > limit * (1.0 + 1e-12) {
        warnings.push(format!("radial grid too coarse: spacing {dr:.4e} > sqrt(h)/8 = {limit:.4e}"));
    }
    let mut faces = Vec::with_capacity(cells);
    let mut boundary_value = 0.0;
    for j in 1..=cells {
        let rf = j as f64 * dr;
        let f_face = eval(rf)?;
        let scale = (rf.powi(d as i32 - 1) * dr).sqrt() * h / dr;
        let lo = j - 1;
        let c_lo = scale * ((values[lo] - f_face) / h).exp() / weights[lo].sqrt();
        let (hi, c_hi) = if j < cells {
            (j as u32, scale * ((values[j] - f_face) / h).exp() / weights[j].sqrt())
        } else {
            boundary_value = f_face;
            (NONE, 0.0)
        };
        faces.push(Face { lo: lo as u32, hi, c_lo, c_hi });
    }
    Ok(RadialWitten {
        d,
        r_max,
        h,
        dr,
        radii,
        weights,
        values,
        warnings,
        factor: FaceFactor { n: cells, band: 1, faces },
        boundary_value,
    })
}

impl RadialWitten {
    /// Converts symmetrized unknowns back to values of `u(r)`.
    pub fn to_physical(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.weights).map(|(x, w)| x / w.sqrt()).collect()
    }

    /// Converts values of `u(r)` to symmetrized unknowns.
    pub fn from_physical(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.weights).map(|(x, w)| x * w.sqrt()).collect()
    }
}

impl FactoredOperator for RadialWitten {
    fn factor(&self) -> &FaceFactor {
        &self.factor
    }

    fn h(&self) -> f64 {
        self.h
    }

    fn grid_label(&self) -> String {
        format!("radial{}d:{}", self.d, self.radii.len())
    }

    fn gibbs_vector(&self) -> Vec<f64> {
        let fmin = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let u: Vec<f64> = self.values.iter().map(|f| (-(f - fmin) / self.h).exp()).collect();
        self.from_physical(&u)
    }

    fn boundary_excess(&self) -> f64 {
        let fmin = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        self.boundary_value - fmin
    }
}

#[derive(Debug, Clone)]
pub struct EigOptions {
    /// Relative eigenvalue change accepted as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra subspace vectors beyond `k` (at least 4 are used).
    pub extra: usize,
    pub seed: u64,
    /// Operators up to this size are handled by a dense SVD of `A`.
    pub dense_limit: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions { tol: 1e-10, max_iter: 400, extra: 0, seed: 0x5eed, dense_limit: 400 }
    }
}

/// Smallest eigenpairs of `AᵀA`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Unit eigenvectors in the operator's unknowns.
    pub vectors: Vec<Vec<f64>>,
    /// `1e2 · ε · ‖AᵀA‖`.
    pub floor: f64,
    pub norm: f64,
    pub below_floor: Vec<bool>,
    /// `‖AᵀA v - λ v‖` per pair.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn reliability_floor(norm: f64) -> f64 {
    1e2 * f64::EPSILON * norm
}

pub fn smallest_eigs<O: FactoredOperator + ?Sized>(op: &O, k: usize, opts: &EigOptions) -> Result<Spectrum, SpectralError> {
    let n = op.size();
    if k == 0 || k > n {
        return Err(SpectralError::TooMany { k, n });
    }
    let factor = op.factor();
    let gram = factor.gram();
    let norm = gram.gershgorin();
    let floor = reliability_floor(norm);
    let (values, vectors, iterations) = if n <= opts.dense_limit {
        let (v, w) = dense_eigs(factor, k);
        (v, w, 0)
    } else {
        subspace_iteration(factor, &gram, k, norm, floor, opts)?
    };
    let residuals = values
        .iter()
        .zip(&vectors)
        .map(|(&l, v)| {
            let mv = factor.apply_t(&factor.apply(v));
            mv.iter().zip(v).map(|(a, b)| (a - l * b).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let below_floor = values.iter().map(|&l| l < floor).collect();
    Ok(Spectrum { values, vectors, floor, norm, below_floor, residuals, iterations })
}

fn dense_eigs(factor: &FaceFactor, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let svd = factor.dense().svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let values = order.iter().take(k).map(|&i| svd.singular_values[i].powi(2)).collect();
    let vectors = order.iter().take(k).map(|&i| vt.row(i).iter().cloned().collect()).collect();
    (values, vectors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt, applied twice. Columns that collapse are
/// replaced by fresh random directions.
fn orthonormalize(cols: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
    for j in 0..cols.len() {
        for _pass in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let c = dot(&done[i], &rest[0]);
                rest[0].par_iter_mut().zip(&done[i]).for_each(|(x, y)| *x -= c * y);
            }
        }
        let nrm = dot(&cols[j], &cols[j]).sqrt();
        if nrm > 0.0 && nrm.is_finite() {
            cols[j].par_iter_mut().for_each(|x| *x /= nrm);
        } else {
            cols[j] = (0..cols[j].len()).map(|_| StandardNormal.sample(rng)).collect();
            orthonormalize_one(cols, j);
        }
    }
}

fn orthonormalize_one(cols: &mut [Vec<f64>], j: usize) {
    for _pass in 0..2 {
        for i in 0..j {
            let (done, rest) = cols.split_at_mut(j);
            let c = dot(&done[i], &rest[0]);
            rest[0].iter_mut().zip(&done[i]).for_each(|(x, y)| *x -= c * y);
        }
    }
    let nrm = dot(&cols[j], &cols[j]).sqrt();
    cols[j].iter_mut().for_each(|x| *x /= nrm);
}

/// Shift-invert subspace iteration with Rayleigh-Ritz done on the factor,
/// so eigenvalues come out as squared singular values of `A W`.
fn subspace_iteration(
    factor: &FaceFactor,
    gram: &SymBand,
    k: usize,
    norm: f64,
    floor: f64,
    opts: &EigOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize), SpectralError> {
    let n = factor.cols();
    let p = (k + opts.extra.max(k.max(4))).min(n);
    let mut shift = (norm * 1e-12).max(f64::MIN_POSITIVE);
    let chol = loop {
        if let Some(c) = gram.cholesky(shift) {
            break c;
        }
        shift *= 100.0;
        if shift > norm * 1e-2 {
            return Err(SpectralError::Factorization(shift));
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut w: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    orthonormalize(&mut w, &mut rng);
    let mut prev: Option<Vec<f64>> = None;
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        w.par_iter_mut().for_each(|c| chol.solve_in_place(c));
        orthonormalize(&mut w, &mut rng);
        let (vals, ritz) = rayleigh_ritz(factor, &w);
        w = ritz;
        if let Some(old) = &prev {
            change = (0..k)
                .map(|i| {
                    let d = (vals[i] - old[i]).abs();
                    if d <= floor {
                        0.0
                    } else {
                        d / vals[i].abs()
                    }
                })
                .fold(0.0, f64::max);
            if change <= opts.tol {
                let vectors = w.into_iter().take(k).collect();
                return Ok((vals[..k].to_vec(), vectors, it));
            }
        }
        prev = Some(vals);
    }
    Err(SpectralError::NoConvergence { iterations: opts.max_iter, change })
}

fn rayleigh_ritz(factor: &FaceFactor, w: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = w.len();
    let cols: Vec<Vec<f64>> = w.iter().map(|c| factor.apply(c)).collect();
    let rows = factor.rows();
    // Thin QR by Householder inside nalgebra, then an SVD of the small R.
    let b = DMatrix::from_fn(rows, p, |i, j| cols[j][i]);
    let r = b.qr().r();
    let svd = r.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let vals = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let n = w[0].len();
    let ritz = order
        .iter()
        .map(|&i| {
            let y: Vec<f64> = (0..p).map(|j| vt[(i, j)]).collect();
            (0..n).into_par_iter().map(|t| (0..p).map(|j| w[j][t] * y[j]).sum()).collect()
        })
        .collect();
    (vals, ritz)
}

/// Result of counting eigenvalues in `[0, η₀h²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallCount {
    pub count: usize,
    pub threshold: f64,
    /// `λ_{count+1} / (η₀h²)` when that eigenvalue was computed.
    pub gap_ratio: Option<f64>,
}

pub const DEFAULT_ETA0: f64 = 0.1;

pub fn count_small(values: &[f64], h: f64, eta0: f64) -> SmallCount {
    let threshold = eta0 * h * h;
    let count = values.iter().filter(|&&l| l <= threshold).count();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    SmallCount { count, threshold, gap_ratio: sorted.get(count).map(|l| l / threshold) }
}

/// Relative change `|a - b| / |b|` used by the resolution-doubling gate.
pub fn self_convergence(coarse: f64, fine: f64) -> f64 {
    (coarse - fine).abs() / fine.abs()
}

pub const SELF_CONVERGENCE_TOL: f64 = 1e-2;

pub const SPECTRUM_CSV_HEADER: &str = "fixture,h,grid,k,index,eigenvalue,floor,below_floor";

/// CSV rows (no header) for one computed spectrum.
pub fn spectrum_csv_rows(fixture: &str, h: f64, grid: &str, s: &Spectrum) -> String {
    let mut out = String::new();
    for (i, l) in s.values.iter().enumerate() {
        out.push_str(&format!("{fixture},{h},{grid},{},{},{l:.17e},{:.6e},{}\n", s.len(), i + 1, s.floor, s.below_floor[i]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic_1d(cells: usize, h: f64) -> DiscreteWitten {
        let p = Potential::parse("x1^2/2", 1).unwrap();
        assemble_witten(&p, &Bounds::cube(1, 5.0), &[cells], h, true).unwrap()
    }

    #[test]
    fn harmonic_1d_spectrum() {
        let h = 0.1;
        let op = harmonic_1d(4096, h);
        let s = smallest_eigs(&op, 3, &EigOptions::default()).unwrap();
        assert!(s.below_floor[0] || s.values[0] < 1e-10);
        for (i, l) in s.values.iter().enumerate() {
            assert!((l - 2.0 * h * i as f64).abs() < 1e-6, "{i}: {l}");
        }
        assert!(s.residuals.iter().all(|r| *r < 1e-8 * s.norm), "{:?} {}", s.residuals, s.norm);
    }

    #[test]
    fn dense_and_iterative_paths_agree() {
        let op = harmonic_1d(360, 0.1);
        let a = smallest_eigs(&op, 4, &EigOptions::default()).unwrap();
        let b = smallest_eigs(&op, 4, &EigOptions { dense_limit: 0, ..Default::default() }).unwrap();
        for i in 1..4 {
            assert!((a.values[i] / b.values[i] - 1.0).abs() < 1e-9);
        }
        assert_eq!(a.iterations, 0);
        assert!(b.iterations > 0);
    }

    #[test]
    fn gibbs_vector_is_near_kernel() {
        let op = harmonic_1d(4096, 0.1);
        let g = op.gibbs_vector();
        assert!(op.rayleigh_quotient(&g) < 1e-10);
    }

    #[test]
    fn harmonic_2d_multiplicities() {
        let p = Potential::parse("(x1^2+x2^2)/2", 2).unwrap();
        let h = 0.5;
        let op = assemble_witten(&p, &Bounds::cube(2, 4.0), &[96, 96], h, true).unwrap();
        let s = smallest_eigs(&op, 6, &EigOptions::default()).unwrap();
        let expect = [0.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        for (l, e) in s.values.iter().zip(expect) {
            assert!((l - 2.0 * e * h).abs() < 2e-3 * (1.0 + e), "{l} vs {e}");
        }
    }

    #[test]
    fn radial_harmonic_sector() {
        let p = Potential::parse("r^2/2", 2).unwrap();
        let h = 0.1;
        let op = assemble_radial(&p.profile().unwrap(), 2, 5.0, 2000, h).unwrap();
        let s = smallest_eigs(&op, 3, &EigOptions::default()).unwrap();
        assert!(s.values[0] < 1e-10);
        assert!((s.values[1] - 4.0 * h).abs() < 1e-4, "{}", s.values[1]);
        assert!((s.values[2] - 8.0 * h).abs() < 1e-4, "{}", s.values[2]);
        assert!(op.truncation_warning(0.0).is_none());
    }

    #[test]
    fn tilted_double_well_second_eigenvalue() {
        let p = Potential::parse("x1^4/4 - x1^2/2 + 0.1*x1", 1).unwrap();
        let h = 0.1;
        let op = assemble_witten(&p, &Bounds::cube(1, 2.5), &[4000], h, true).unwrap();
        let s = smallest_eigs(&op, 3, &EigOptions::default()).unwrap();
        assert!(s.below_floor[0]);
        // D h e^{-2S/h} with the closed-form constants of this well.
        let pred = 0.4065439530068045 * h * (-2.0 * 0.15766495734760555 / h).exp();
        assert!((s.values[1] / pred - 1.0).abs() < 0.15, "{} vs {pred}", s.values[1]);
        // At h = 0.1 the default η₀ sits below λ₂; a wider window separates the pair.
        assert_eq!(count_small(&s.values, h, 0.5).count, 2);
    }

    #[test]
    fn errors_and_guards() {
        let p = Potential::parse("x1^2/2", 1).unwrap();
        assert!(matches!(
            assemble_witten(&p, &Bounds::cube(1, 5.0), &[20], 0.1, true),
            Err(SpectralError::TooCoarse { .. })
        ));
        let loose = assemble_witten(&p, &Bounds::cube(1, 5.0), &[20], 0.1, false).unwrap();
        assert_eq!(loose.warnings.len(), 2);
        let steep = Potential::parse("x1^4", 1).unwrap();
        assert!(matches!(
            assemble_witten(&steep, &Bounds::cube(1, 5.0), &[4096], 0.01, true),
            Err(SpectralError::IllConditioned { .. })
        ));
        assert!(matches!(smallest_eigs(&loose, 21, &EigOptions::default()), Err(SpectralError::TooMany { .. })));
        let q = Potential::parse("r^2/2", 2).unwrap();
        assert!(matches!(assemble_radial(&q.profile().unwrap(), 1, 3.0, 100, 0.1), Err(SpectralError::RadialDimension(1))));
        let small_box = assemble_radial(&q.profile().unwrap(), 2, 0.5, 100, 0.1).unwrap();
        assert!(small_box.truncation_warning(0.1).is_some());
    }

    #[test]
    fn count_small_harmonic() {
        let c = count_small(&[1e-17, 0.2, 0.4], 0.1, 0.1);
        assert_eq!(c.count, 1);
        assert!((c.gap_ratio.unwrap() - 200.0).abs() < 1e-9);
        let csv = spectrum_csv_rows(
            "h",
            0.1,
            "10",
            &Spectrum {
                values: vec![0.0],
                vectors: vec![vec![]],
                floor: 1e-12,
                norm: 1.0,
                below_floor: vec![true],
                residuals: vec![0.0],
                iterations: 0,
            },
        );
        assert!(csv.starts_with("h,0.1,10,1,1,"));
    }

    #[test]
    fn operator_is_symmetric_psd() {
        let p = Potential::parse("x1^4/4 - x1^2/2 + 0.3*x1*x2 + x2^2", 2).unwrap();
        let op = assemble_witten(&p, &Bounds::cube(2, 2.0), &[12, 9], 0.3, false).unwrap();
        let n = op.size();
        let x: Vec<f64> = (0..n).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let (ax, ay) = (op.apply(&x), op.apply(&y));
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = ay.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!(op.quadratic_form(&x) >= 0.0);
        let gram = op.factor().gram();
        for i in 0..n {
            let e: Vec<f64> = (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect();
            let col = op.apply(&e);
            for j in i.saturating_sub(gram.bandwidth())..=i {
                assert!((col[j] - gram.get(i, j)).abs() < 1e-12);
            }
        }
    }
}
