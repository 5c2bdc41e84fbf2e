//! Interaction matrix of the quasimode family and the eigenvalues of
//! diagonally scaled near-identity matrices.

use super::{QuasimodeError, QuasimodeField};
use crate::spectral::FactoredOperator;
use nalgebra::DMatrix;

/// Gram and quadratic-form matrices of the normalized quasimodes, and the
/// operator restricted to the small eigenspace.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    /// `⟨φ_j, φ_k⟩`.
    pub gram: DMatrix<f64>,
    /// `⟨Δ_f φ_j, φ_k⟩`.
    pub q: DMatrix<f64>,
    /// `1 - ‖Π φ_j‖` per quasimode.
    pub projection_loss: Vec<f64>,
    /// Quasimode indices in basis order (nonincreasing barrier).
    pub order: Vec<usize>,
    /// `⟨Δ_f e_j, e_k⟩` in the orthonormalized projected basis.
    pub m_h: DMatrix<f64>,
    /// Eigenvalues of `m_h`, ascending.
    pub eigenvalues: Vec<f64>,
}

impl InteractionMatrix {
    pub fn max_gram_offdiagonal(&self) -> f64 {
        let n = self.gram.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max(self.gram[(i, j)].abs());
                }
            }
        }
        worst
    }
}

/// Largest projection loss accepted before the quasimodes are declared
/// inconsistent with the computed eigenvectors.
pub const MAX_PROJECTION_LOSS: f64 = 1e-2;

/// `barriers[j]` is `S` of the minimum behind `psis[j]` (infinite for the
/// global minimum); `eigvecs` are orthonormal eigenvectors spanning the
/// small eigenspace, in the operator's unknowns.
pub fn interaction_matrix<O: FactoredOperator + ?Sized>(
    op: &O,
    psis: &[&QuasimodeField],
    barriers: &[f64],
    eigvecs: &[Vec<f64>],
) -> Result<InteractionMatrix, QuasimodeError> {
    let n0 = psis.len();
    if n0 == 0 || barriers.len() != n0 || eigvecs.len() != n0 {
        return Err(QuasimodeError::Precondition(format!(
            "{n0} quasimodes, {} barriers and {} eigenvectors",
            barriers.len(),
            eigvecs.len()
        )));
    }
    let size = op.size();
    if psis.iter().any(|p| p.values.len() != size) || eigvecs.iter().any(|v| v.len() != size) {
        return Err(QuasimodeError::GridMismatch);
    }
    let phis: Vec<Vec<f64>> = psis.iter().map(|p| p.normalized()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a_phi: Vec<Vec<f64>> = phis.iter().map(|v| op.factor().apply(v)).collect();
    let gram = DMatrix::from_fn(n0, n0, |i, j| dot(&phis[i], &phis[j]));
    let q = DMatrix::from_fn(n0, n0, |i, j| dot(&a_phi[i], &a_phi[j]));

    let coeffs: Vec<Vec<f64>> = phis.iter().map(|phi| eigvecs.iter().map(|e| dot(phi, e)).collect()).collect();
    let mut projection_loss = Vec::with_capacity(n0);
    for (j, c) in coeffs.iter().enumerate() {
        let loss = 1.0 - c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if loss > MAX_PROJECTION_LOSS {
            return Err(QuasimodeError::ProjectionLoss { index: j, loss });
        }
        projection_loss.push(loss);
    }

    let mut order: Vec<usize> = (0..n0).collect();
    order.sort_by(|&a, &b| barriers[b].total_cmp(&barriers[a]));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n0);
    for &j in &order {
        let mut c = coeffs[j].clone();
        for _pass in 0..2 {
            for b in &basis {
                let t = dot(&c, b);
                c.iter_mut().zip(b).for_each(|(x, y)| *x -= t * y);
            }
        }
        let nrm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(nrm > 0.0) {
            return Err(QuasimodeError::Precondition("projected quasimodes are linearly dependent".into()));
        }
        c.iter_mut().for_each(|x| *x /= nrm);
        basis.push(c);
    }
    let vectors: Vec<Vec<f64>> = basis
        .iter()
        .map(|c| {
            let mut u = vec![0.0; size];
            for (ci, e) in c.iter().zip(eigvecs) {
                u.iter_mut().zip(e).for_each(|(x, y)| *x += ci * y);
            }
            u
        })
        .collect();
    let a_u: Vec<Vec<f64>> = vectors.iter().map(|u| op.factor().apply(u)).collect();
    let m_h = DMatrix::from_fn(n0, n0, |i, j| dot(&a_u[i], &a_u[j]));
    let b = DMatrix::from_fn(a_u[0].len(), n0, |r, j| a_u[j][r]);
    let r = b.qr().r();
    let mut eigenvalues: Vec<f64> = r.singular_values().iter().map(|s| s * s).collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(InteractionMatrix { gram, q, projection_loss, order, m_h, eigenvalues })
}

/// CSV of `G`, `Q`, `M_h` and the projection losses.
pub fn interaction_csv(fixture: &str, h: f64, names: &[String], im: &InteractionMatrix) -> String {
    let mut out = String::new();
    for (tag, m) in [("gram", &im.gram), ("q", &im.q)] {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push_str(&format!("{fixture},{h},{tag},{},{},{:.17e}\n", names[i], names[j], m[(i, j)]));
            }
        }
    }
    for i in 0..im.m_h.nrows() {
        for j in 0..im.m_h.ncols() {
            let (a, b) = (&names[im.order[i]], &names[im.order[j]]);
            out.push_str(&format!("{fixture},{h},m_h,{a},{b},{:.17e}\n", im.m_h[(i, j)]));
        }
    }
    for (i, l) in im.projection_loss.iter().enumerate() {
        out.push_str(&format!("{fixture},{h},projection_loss,{},,{l:.6e}\n", names[i]));
    }
    for (i, l) in im.eigenvalues.iter().enumerate() {
        out.push_str(&format!("{fixture},{h},m_h_eigenvalue,{},,{l:.17e}\n", i + 1));
    }
    out
}

pub const INTERACTION_CSV_HEADER: &str = "fixture,h,matrix,row,col,value";

/// Eigenvalues of `diag(ν)(I + E)diag(ν)` with a relative-error bound.
#[derive(Debug, Clone)]
pub struct PerturbedEigs {
    /// `(ν_j², eigenvalue)` pairs, ascending.
    pub pairs: Vec<(f64, f64)>,
    /// `n ‖E‖_max`.
    pub relative_bound: f64,
    /// Whether the `ν_j²` are separated by more than the bound, so that the
    /// pairing is certified.
    pub certified: bool,
}

impl PerturbedEigs {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Singular values of `y` by one-sided Jacobi rotations on its columns.
fn jacobi_singular_values(mut y: DMatrix<f64>) -> Vec<f64> {
    let n = y.ncols();
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let a = y.column(i).norm_squared();
                let b = y.column(j).norm_squared();
                let g = y.column(i).dot(&y.column(j));
                if g == 0.0 || g.abs() <= f64::EPSILON * (a * b).sqrt() {
                    continue;
                }
                rotated = true;
                let z = (b - a) / (2.0 * g);
                let t = z.signum() / (z.abs() + (1.0 + z * z).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..y.nrows() {
                    let (yi, yj) = (y[(r, i)], y[(r, j)]);
                    y[(r, i)] = c * yi - s * yj;
                    y[(r, j)] = s * yi + c * yj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n).map(|j| y.column(j).norm()).collect()
}

pub fn perturbed_diag_eigs(nu: &[f64], e: &DMatrix<f64>) -> Result<PerturbedEigs, QuasimodeError> {
    let n = nu.len();
    if n == 0 || e.nrows() != n || e.ncols() != n {
        return Err(QuasimodeError::Precondition("E must be square and match ν".into()));
    }
    if nu.iter().any(|v| !v.is_finite()) || e.iter().any(|v| !v.is_finite()) {
        return Err(QuasimodeError::Precondition("entries must be finite".into()));
    }
    let emax = e.amax();
    if emax >= 1.0 / (2.0 * n as f64) {
        return Err(QuasimodeError::Precondition(format!("‖E‖_max = {emax:.3e} is not below 1/(2n)")));
    }
    for i in 0..n {
        for j in 0..i {
            if (e[(i, j)] - e[(j, i)]).abs() > 1e-14 * emax.max(f64::MIN_POSITIVE) {
                return Err(QuasimodeError::Precondition("E must be symmetric".into()));
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| nu[i] != 0.0).collect();
    let mut values = vec![0.0; n - keep.len()];
    if !keep.is_empty() {
        let k = keep.len();
        let m = DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 } else { 0.0 } + e[(keep[a], keep[b])]);
        let l = m
            .cholesky()
            .ok_or_else(|| QuasimodeError::Precondition("I + E is not positive definite".into()))?
            .l();
        // (D L)ᵀ has columns scaled by ν, which keeps the tiny singular
        // values relatively accurate under one-sided Jacobi.
        let y = DMatrix::from_fn(k, k, |a, b| l[(b, a)] * nu[keep[b]]);
        values.extend(jacobi_singular_values(y).into_iter().map(|s| s * s));
    }
    values.sort_by(f64::total_cmp);
    let mut squares: Vec<f64> = nu.iter().map(|v| v * v).collect();
    squares.sort_by(f64::total_cmp);
    let relative_bound = n as f64 * emax;
    let certified = squares.windows(2).all(|w| w[1] - w[0] > 2.0 * relative_bound * w[1]);
    Ok(PerturbedEigs { pairs: squares.into_iter().zip(values).collect(), relative_bound, certified })
}
