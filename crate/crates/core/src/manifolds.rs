//! Declared critical manifolds: quadrature, nondegeneracy checks,
//! transversal Hessians and the negative normal direction of saddles.

use crate::potential::expr::{parse, EvalError, Expr, ParseError, VarSpace};
use crate::potential::scalar::DualVec;
use crate::potential::Potential;
use crate::quadrature::{gauss_legendre, periodic_trapezoid};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("evaluation failed on manifold `{name}`: {source}")]
    Eval { name: String, source: EvalError },
    #[error("invalid declaration of `{name}`: {reason}")]
    Invalid { name: String, reason: String },
    #[error("degenerate parametrization of `{name}` at node {node}: Jacobian singular values {min_sv:e} / {max_sv:e}")]
    DegenerateParametrization { name: String, node: usize, min_sv: f64, max_sv: f64 },
    #[error("index of `{name}` differs across nodes ({first} at node 0, {other} at node {node})")]
    InconsistentIndex { name: String, first: usize, other: usize, node: usize },
    #[error("`{name}` is not an index-1 manifold (node {node} has {negatives} negative transversal eigenvalues)")]
    NotIndexOne { name: String, node: usize, negatives: usize },
    #[error("negative eigenvalue of `{name}` at node {node} is not separated from zero ({mu:e})")]
    NearDegenerate { name: String, node: usize, mu: f64 },
    #[error("the negative normal line of `{name}` is not orientable (sign flip between nodes {a} and {b})")]
    NonOrientableNormalLine { name: String, a: usize, b: usize },
    #[error("`{name}` failed verification: {reason}")]
    NotCritical { name: String, reason: String },
}

/// Verification tolerances.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    pub grad: f64,
    pub value: f64,
    /// Relative to the spectral radius of the Hessian at the node.
    pub eig_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { grad: 1e-8, value: 1e-8, eig_rel: 1e-6 }
    }
}

/// Coordinates of a parametrized manifold as expressions in `t1..tk`.
#[derive(Debug, Clone)]
pub struct ParamMap {
    pub sources: Vec<String>,
    pub ranges: Vec<(f64, f64)>,
    pub periodic: Vec<bool>,
    exprs: Vec<Expr>,
}

impl ParamMap {
    /// Ambient point at parameter `t`.
    pub fn point_at(&self, t: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.exprs.iter().map(|e| e.eval(t)).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Geometry {
    Point(Vec<f64>),
    /// Round sphere of the given radius in the coordinate plane spanned by
    /// `axes`, centered at `center`.
    Sphere { center: Vec<f64>, radius: f64, axes: Vec<usize> },
    Parametrized(ParamMap),
}

/// Quadrature node with its surface weight and an orthonormal normal basis.
#[derive(Debug, Clone)]
pub struct Node {
    pub point: Vec<f64>,
    pub weight: f64,
    /// `d x (d - dim)` matrix with orthonormal columns.
    pub normal: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct CriticalManifold {
    pub name: String,
    pub geometry: Geometry,
    pub ambient_dim: usize,
    pub dim: usize,
    pub nodes: Vec<Node>,
    /// Tensor shape of the node grid, used for neighbor relations.
    pub shape: Vec<usize>,
    pub periodic_axes: Vec<bool>,
    pub value: Option<f64>,
    pub index: Option<usize>,
}

fn invalid(name: &str, reason: impl Into<String>) -> ManifoldError {
    ManifoldError::Invalid { name: name.to_string(), reason: reason.into() }
}

fn sphere_area(k: usize) -> f64 {
    let n = (k + 1) as f64;
    2.0 * PI.powf(n / 2.0) / libm::tgamma(n / 2.0)
}

impl CriticalManifold {
    pub fn point(name: &str, coords: Vec<f64>) -> Result<Self, ManifoldError> {
        if coords.is_empty() || coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid(name, "point needs finite coordinates"));
        }
        let d = coords.len();
        Ok(CriticalManifold {
            name: name.to_string(),
            geometry: Geometry::Point(coords.clone()),
            ambient_dim: d,
            dim: 0,
            nodes: vec![Node { point: coords, weight: 1.0, normal: DMatrix::identity(d, d) }],
            shape: vec![1],
            periodic_axes: vec![false],
            value: None,
            index: None,
        })
    }

    /// Sphere of dimension `axes.len() - 1` with `n` nodes per angle.
    pub fn sphere(name: &str, center: Vec<f64>, radius: f64, axes: Vec<usize>, n: usize) -> Result<Self, ManifoldError> {
        let d = center.len();
        if axes.len() < 2 || axes.iter().any(|&a| a >= d) {
            return Err(invalid(name, "sphere needs at least two distinct in-range axes"));
        }
        let mut sorted = axes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != axes.len() {
            return Err(invalid(name, "repeated sphere axis"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(name, "sphere radius must be positive"));
        }
        if n < 3 {
            return Err(invalid(name, "at least 3 nodes per angle"));
        }
        let k = axes.len() - 1;
        let (az, waz) = periodic_trapezoid(n, 0.0, 2.0 * PI);
        let (po, wpo) = gauss_legendre(n, 0.0, PI);
        let shape = vec![n; k];
        let mut periodic = vec![false; k];
        periodic[k - 1] = true;
        let total: usize = shape.iter().product();
        let mut nodes = Vec::with_capacity(total);
        let mut multi = vec![0usize; k];
        for _ in 0..total {
            let mut angles = vec![0.0; k];
            let mut w = radius.powi(k as i32);
            for j in 0..k - 1 {
                angles[j] = po[multi[j]];
                w *= wpo[multi[j]] * angles[j].sin().powi((k - 1 - j) as i32);
            }
            angles[k - 1] = az[multi[k - 1]];
            w *= waz[multi[k - 1]];
            let mut u = vec![0.0; k + 1];
            let mut s = 1.0;
            for j in 0..k {
                u[j] = s * angles[j].cos();
                s *= angles[j].sin();
            }
            u[k] = s;
            let mut point = center.clone();
            let mut radial = DVector::zeros(d);
            for (a, &ax) in axes.iter().enumerate() {
                point[ax] += radius * u[a];
                radial[ax] = u[a];
            }
            let mut normal = DMatrix::zeros(d, d - k);
            normal.set_column(0, &radial);
            let mut c = 1;
            for i in 0..d {
                if !axes.contains(&i) {
                    normal[(i, c)] = 1.0;
                    c += 1;
                }
            }
            nodes.push(Node { point, weight: w, normal });
            for j in (0..k).rev() {
                multi[j] += 1;
                if multi[j] < shape[j] {
                    break;
                }
                multi[j] = 0;
            }
        }
        let exact = sphere_area(k) * radius.powi(k as i32);
        let raw: f64 = nodes.iter().map(|n| n.weight).sum();
        for node in &mut nodes {
            node.weight *= exact / raw;
        }
        Ok(CriticalManifold {
            name: name.to_string(),
            geometry: Geometry::Sphere { center, radius, axes },
            ambient_dim: d,
            dim: k,
            nodes,
            shape,
            periodic_axes: periodic,
            value: None,
            index: None,
        })
    }

    /// Manifold given by coordinate expressions in `t1..tk` over a box of
    /// parameters, with `n` nodes per parameter axis.
    pub fn parametrized(
        name: &str,
        sources: &[String],
        ranges: Vec<(f64, f64)>,
        periodic: Vec<bool>,
        n: usize,
    ) -> Result<Self, ManifoldError> {
        let d = sources.len();
        let k = ranges.len();
        if k == 0 || k >= d || periodic.len() != k {
            return Err(invalid(name, "parameter count must be between 1 and d-1"));
        }
        if ranges.iter().any(|(a, b)| !(a < b)) {
            return Err(invalid(name, "empty parameter range"));
        }
        let exprs = sources
            .iter()
            .map(|s| parse(s, VarSpace::parameters(k)))
            .collect::<Result<Vec<_>, _>>()?;
        let rules: Vec<(Vec<f64>, Vec<f64>)> = ranges
            .iter()
            .zip(&periodic)
            .map(|(&(a, b), &p)| if p { periodic_trapezoid(n, a, b) } else { gauss_legendre(n, a, b) })
            .collect();
        let shape = vec![n; k];
        let total: usize = shape.iter().product();
        let mut nodes = Vec::with_capacity(total);
        let mut multi = vec![0usize; k];
        for idx in 0..total {
            let t: Vec<DualVec> = (0..k).map(|j| DualVec::variable(rules[j].0[multi[j]], j)).collect();
            let mut w0 = 1.0;
            for j in 0..k {
                w0 *= rules[j].1[multi[j]];
            }
            let mut point = vec![0.0; d];
            let mut jac = DMatrix::zeros(d, k);
            for (i, e) in exprs.iter().enumerate() {
                let v = e
                    .eval(&t)
                    .map_err(|source| ManifoldError::Eval { name: name.to_string(), source })?;
                point[i] = v.v;
                for j in 0..k {
                    jac[(i, j)] = v.g[j];
                }
            }
            let sv = jac.clone().svd(false, false).singular_values;
            let max_sv = sv.max();
            let min_sv = sv.min();
            if !(max_sv > 0.0) || min_sv <= 1e-10 * max_sv {
                return Err(ManifoldError::DegenerateParametrization { name: name.to_string(), node: idx, min_sv, max_sv });
            }
            let area: f64 = sv.iter().product();
            let normal = normal_complement(&jac);
            nodes.push(Node { point, weight: w0 * area, normal });
            for j in (0..k).rev() {
                multi[j] += 1;
                if multi[j] < n {
                    break;
                }
                multi[j] = 0;
            }
        }
        Ok(CriticalManifold {
            name: name.to_string(),
            geometry: Geometry::Parametrized(ParamMap { sources: sources.to_vec(), ranges, periodic: periodic.clone(), exprs }),
            ambient_dim: d,
            dim: k,
            nodes,
            shape,
            periodic_axes: periodic,
            value: None,
            index: None,
        })
    }

    /// Runs [`verify_critical`] and [`classify_index`], caching the value
    /// and index on success.
    pub fn verified(mut self, p: &Potential, tol: &Tolerances) -> Result<Self, ManifoldError> {
        let rep = verify_critical(p, &self, tol)?;
        if !rep.ok {
            return Err(ManifoldError::NotCritical { name: self.name.clone(), reason: rep.summary() });
        }
        self.value = Some(rep.value);
        self.index = Some(classify_index(p, &self)?);
        Ok(self)
    }

    /// Critical value, from the cache or the mean over nodes.
    pub fn critical_value(&self, p: &Potential) -> Result<f64, ManifoldError> {
        if let Some(v) = self.value {
            return Ok(v);
        }
        let mut s = 0.0;
        for n in &self.nodes {
            s += p.value(&n.point).map_err(|source| ManifoldError::Eval { name: self.name.clone(), source })?;
        }
        Ok(s / self.nodes.len() as f64)
    }

    /// Pairs of neighboring nodes in the tensor node grid, including the
    /// wrap-around pairs of periodic axes.
    pub fn node_edges(&self) -> Vec<(usize, usize)> {
        let k = self.shape.len();
        let total: usize = self.shape.iter().product();
        let mut strides = vec![1usize; k];
        for j in (0..k.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.shape[j + 1];
        }
        let mut edges = Vec::new();
        for idx in 0..total {
            for j in 0..k {
                let c = (idx / strides[j]) % self.shape[j];
                if c + 1 < self.shape[j] {
                    edges.push((idx, idx + strides[j]));
                } else if self.periodic_axes[j] && self.shape[j] > 2 {
                    edges.push((idx, idx - c * strides[j]));
                }
            }
        }
        edges
    }

    /// Euclidean distance from `x` to the manifold.
    pub fn distance_to(&self, x: &[f64]) -> f64 {
        match &self.geometry {
            Geometry::Point(c) => dist(x, c),
            Geometry::Sphere { center, radius, axes } => {
                let mut in_plane = 0.0;
                let mut off = 0.0;
                for i in 0..x.len() {
                    let dx = x[i] - center[i];
                    if axes.contains(&i) {
                        in_plane += dx * dx;
                    } else {
                        off += dx * dx;
                    }
                }
                ((in_plane.sqrt() - radius).powi(2) + off).sqrt()
            }
            Geometry::Parametrized(_) => self.nodes.iter().map(|n| dist(x, &n.point)).fold(f64::INFINITY, f64::min),
        }
    }

    /// Index of the quadrature node closest to `x`.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let dd = dist2(x, &n.point);
            if dd < best.0 {
                best = (dd, i);
            }
        }
        best.1
    }
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

fn normal_complement(jac: &DMatrix<f64>) -> DMatrix<f64> {
    let d = jac.nrows();
    let k = jac.ncols();
    let eig = SymmetricEigen::new(jac * jac.transpose());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut n = DMatrix::zeros(d, d - k);
    for (c, &i) in order.iter().take(d - k).enumerate() {
        n.set_column(c, &eig.eigenvectors.column(i));
    }
    n
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalReport {
    pub ok: bool,
    pub max_grad: f64,
    pub value: f64,
    pub value_spread: f64,
    /// Largest magnitude among the expected near-zero Hessian eigenvalues.
    pub max_tangent_eig: f64,
    /// Smallest magnitude among the remaining eigenvalues.
    pub min_normal_eig: f64,
    pub worst_eig_tol: f64,
    pub index_consistent: bool,
}

impl CriticalReport {
    pub fn summary(&self) -> String {
        format!(
            "max |grad| {:.3e}, value spread {:.3e}, tangent eig {:.3e}, normal eig {:.3e}, consistent index {}",
            self.max_grad, self.value_spread, self.max_tangent_eig, self.min_normal_eig, self.index_consistent
        )
    }
}

/// Checks criticality and Morse-Bott nondegeneracy at every node.
pub fn verify_critical(p: &Potential, m: &CriticalManifold, tol: &Tolerances) -> Result<CriticalReport, ManifoldError> {
    if m.ambient_dim != p.dim() {
        return Err(invalid(&m.name, format!("ambient dimension {} differs from the potential's {}", m.ambient_dim, p.dim())));
    }
    let mut rep = CriticalReport {
        ok: true,
        max_grad: 0.0,
        value: 0.0,
        value_spread: 0.0,
        max_tangent_eig: 0.0,
        min_normal_eig: f64::INFINITY,
        worst_eig_tol: 0.0,
        index_consistent: true,
    };
    let (mut vmin, mut vmax, mut vsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let mut first_index = None;
    let mut eig_ok = true;
    for node in &m.nodes {
        let e = p.eval2(&node.point).map_err(|source| ManifoldError::Eval { name: m.name.clone(), source })?;
        rep.max_grad = rep.max_grad.max(e.gradient.norm());
        vmin = vmin.min(e.value);
        vmax = vmax.max(e.value);
        vsum += e.value;
        let mut mags: Vec<f64> = e.hessian.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let radius = mags.last().copied().unwrap_or(0.0);
        let eig_tol = tol.eig_rel * radius;
        rep.worst_eig_tol = rep.worst_eig_tol.max(eig_tol);
        let tangent = mags[..m.dim].iter().copied().fold(0.0, f64::max);
        let normal = mags[m.dim..].iter().copied().fold(f64::INFINITY, f64::min);
        rep.max_tangent_eig = rep.max_tangent_eig.max(tangent);
        rep.min_normal_eig = rep.min_normal_eig.min(normal);
        if tangent >= eig_tol.max(f64::MIN_POSITIVE) && m.dim > 0 || normal <= eig_tol {
            eig_ok = false;
        }
        let th = transversal_from_hessian(&e.hessian, &node.normal);
        let neg = th.eigenvalues.iter().filter(|v| **v < 0.0).count();
        match first_index {
            None => first_index = Some(neg),
            Some(j) if j != neg => rep.index_consistent = false,
            _ => {}
        }
    }
    rep.value = vsum / m.nodes.len() as f64;
    rep.value_spread = vmax - vmin;
    rep.ok = rep.max_grad < tol.grad && rep.value_spread < tol.value && eig_ok && rep.index_consistent;
    Ok(rep)
}

#[derive(Debug, Clone)]
pub struct TransversalHessian {
    pub matrix: DMatrix<f64>,
    pub det: f64,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Ambient eigenvectors, columns matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

fn transversal_from_hessian(h: &DMatrix<f64>, n: &DMatrix<f64>) -> TransversalHessian {
    let mut matrix = n.transpose() * h * n;
    matrix = (&matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..matrix.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &(n * eig.eigenvectors.column(i)));
    }
    let det = matrix.determinant();
    TransversalHessian { matrix, det, eigenvalues, eigenvectors: vecs }
}

/// `N^T Hess f N` at one node, with its determinant and spectrum.
pub fn transversal_hessian(p: &Potential, m: &CriticalManifold, node: usize) -> Result<TransversalHessian, ManifoldError> {
    let nd = m.nodes.get(node).ok_or_else(|| invalid(&m.name, format!("node {node} out of range")))?;
    let e = p.eval2(&nd.point).map_err(|source| ManifoldError::Eval { name: m.name.clone(), source })?;
    Ok(transversal_from_hessian(&e.hessian, &nd.normal))
}

/// Number of negative transversal eigenvalues, required equal at all nodes.
pub fn classify_index(p: &Potential, m: &CriticalManifold) -> Result<usize, ManifoldError> {
    let mut first = None;
    for i in 0..m.nodes.len() {
        let th = transversal_hessian(p, m, i)?;
        let neg = th.eigenvalues.iter().filter(|v| **v < 0.0).count();
        match first {
            None => first = Some(neg),
            Some(j) if j != neg => {
                return Err(ManifoldError::InconsistentIndex { name: m.name.clone(), first: j, other: neg, node: i })
            }
            _ => {}
        }
    }
    Ok(first.unwrap_or(0))
}

/// Negative eigenvalue and oriented unit eigenvector at every node.
#[derive(Debug, Clone)]
pub struct SaddleFrame {
    pub mu: Vec<f64>,
    pub nu: Vec<DVector<f64>>,
    pub orientable: bool,
}

/// Negative eigenpairs per node with an arbitrary sign per node.
pub fn negative_directions(p: &Potential, m: &CriticalManifold) -> Result<(Vec<f64>, Vec<DVector<f64>>), ManifoldError> {
    let mut mu = Vec::with_capacity(m.nodes.len());
    let mut nu = Vec::with_capacity(m.nodes.len());
    for i in 0..m.nodes.len() {
        let th = transversal_hessian(p, m, i)?;
        let neg = th.eigenvalues.iter().filter(|v| **v < 0.0).count();
        if neg != 1 {
            return Err(ManifoldError::NotIndexOne { name: m.name.clone(), node: i, negatives: neg });
        }
        let scale = th.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let lead = th.eigenvalues[0];
        let next = th.eigenvalues.get(1).copied().unwrap_or(f64::INFINITY);
        if lead.abs() <= 1e-10 * scale || (next - lead).abs() <= 1e-10 * scale {
            return Err(ManifoldError::NearDegenerate { name: m.name.clone(), node: i, mu: lead });
        }
        let mut v: DVector<f64> = th.eigenvectors.column(0).into_owned();
        v /= v.norm();
        mu.push(lead);
        nu.push(v);
    }
    Ok((mu, nu))
}

/// Orients the negative eigenvector field by continuity along the node
/// grid. Fails with [`ManifoldError::NonOrientableNormalLine`] when a
/// periodic loop flips the sign.
pub fn negative_direction_field(p: &Potential, m: &CriticalManifold) -> Result<SaddleFrame, ManifoldError> {
    let (mu, mut nu) = negative_directions(p, m)?;
    // Deterministic sign at the root: first non-negligible entry positive.
    if let Some(c) = nu[0].iter().find(|c| c.abs() > 1e-12) {
        if *c < 0.0 {
            nu[0] = -nu[0].clone();
        }
    }
    let n = nu.len();
    let edges = m.node_edges();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(a) = queue.pop_front() {
        for &b in &adj[a] {
            if !seen[b] {
                if nu[a].dot(&nu[b]) < 0.0 {
                    nu[b] = -nu[b].clone();
                }
                seen[b] = true;
                queue.push_back(b);
            }
        }
    }
    for &(a, b) in &edges {
        if nu[a].dot(&nu[b]) <= 0.0 {
            return Err(ManifoldError::NonOrientableNormalLine { name: m.name.clone(), a, b });
        }
    }
    Ok(SaddleFrame { mu, nu, orientable: true })
}
