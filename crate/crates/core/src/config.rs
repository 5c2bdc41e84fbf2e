//! TOML fixture files: potential, box, grid, declared critical manifolds
//! and per-command settings.

use crate::labeling::{label_profile, run_labeling, ClassifiedSaddle, LabelingError, LabelingResult, RadialLabeling};
use crate::manifolds::{CriticalManifold, ManifoldError, Tolerances};
use crate::potential::expr::EvalError;
use crate::potential::{Bounds, Potential, PotentialError, Profile};
use crate::sublevel::{classify_separating, GridSampling, SublevelError};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("invalid fixture: {0}")]
    Invalid(String),
    #[error("fixture `{fixture}` declares no {what}, which `{command}` needs")]
    Missing { fixture: String, what: &'static str, command: &'static str },
    #[error("Newton refinement of `{0}` did not converge")]
    Refinement(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Sublevel(#[from] SublevelError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldSpec {
    Point {
        name: String,
        point: Vec<f64>,
        /// Polish the point with Newton steps on the gradient.
        #[serde(default = "yes")]
        refine: bool,
    },
    Sphere {
        name: String,
        center: Vec<f64>,
        radius: f64,
        axes: Vec<usize>,
        nodes: usize,
    },
    Parametrized {
        name: String,
        coords: Vec<String>,
        ranges: Vec<[f64; 2]>,
        periodic: Vec<bool>,
        nodes: usize,
    },
}

impl ManifoldSpec {
    pub fn name(&self) -> &str {
        match self {
            ManifoldSpec::Point { name, .. } | ManifoldSpec::Sphere { name, .. } | ManifoldSpec::Parametrized { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleSpec {
    pub manifold: ManifoldSpec,
    /// Radius of the neighborhood used by the separation probe.
    pub probe_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSpec {
    pub r_max: f64,
    pub cells: usize,
    pub minima_radii: Vec<f64>,
    pub saddle_radii: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Grid,
    Radial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    pub h: Vec<f64>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "grid_solver")]
    pub solver: SolverKind,
    #[serde(default)]
    pub eta0: Option<f64>,
    /// Truncation box for grid solves when it differs from the sampling box.
    #[serde(default, rename = "box")]
    pub domain: Option<BoxSpec>,
}

fn grid_solver() -> SolverKind {
    SolverKind::Grid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasimodeSpec {
    pub h: Vec<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub tau_fraction: Option<f64>,
    #[serde(default)]
    pub agmon_phase: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub minimum: String,
    pub h: Vec<f64>,
    pub paths: usize,
    /// Horizon in units of the predicted mean exit time `h/λ`.
    #[serde(default = "horizon_factor")]
    pub horizon_factor: f64,
    /// Exit margin as a fraction of the barrier.
    #[serde(default = "margin")]
    pub margin: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn horizon_factor() -> f64 {
    30.0
}

fn margin() -> f64 {
    0.1
}

/// Tolerances that make `validate` or `simulate` fail when violated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToleranceSpec {
    /// `|λ_num/λ_pred − 1| ≤ max_error` for one minimum at one h.
    Ratio { minimum: String, h: f64, max_error: f64 },
    /// `count_small` equals the number of minima and the next eigenvalue
    /// clears `η₀h²` by `gap_factor`.
    Count { eta0: f64, gap_factor: f64 },
    /// Eigenvalues at one h match `expected` to relative `rel`.
    Eigenvalues { h: f64, expected: Vec<f64>, rel: f64 },
    /// Arrhenius slope within `max_relative_error` of `2S`.
    Arrhenius { max_relative_error: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub name: String,
    pub dim: usize,
    pub potential: String,
    #[serde(rename = "box")]
    pub domain: BoxSpec,
    pub grid: Vec<usize>,
    #[serde(default)]
    pub minima: Vec<ManifoldSpec>,
    #[serde(default)]
    pub saddles: Vec<SaddleSpec>,
    #[serde(default)]
    pub radial: Option<RadialSpec>,
    #[serde(default)]
    pub solve: Option<SolveSpec>,
    #[serde(default)]
    pub quasimode: Option<QuasimodeSpec>,
    #[serde(default)]
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub tolerances: Vec<ToleranceSpec>,
}

/// A fixture with its potential parsed and manifolds built and verified.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub potential: Potential,
    pub bounds: Bounds,
    /// Box for grid eigenvalue solves; the sampling box unless `[solve]`
    /// gives its own.
    pub solve_bounds: Bounds,
    pub minima: Vec<CriticalManifold>,
    pub saddles: Vec<CriticalManifold>,
    pub probe_radii: Vec<f64>,
}

/// Newton iteration on `∇f = 0` from `x`.
pub fn refine_point(p: &Potential, name: &str, x: &[f64]) -> Result<Vec<f64>, ConfigError> {
    let mut x = DVector::from_row_slice(x);
    for _ in 0..60 {
        let e = p.eval2(x.as_slice())?;
        let scale = e.hessian.amax().max(1.0);
        if e.gradient.amax() <= 1e-15 * scale {
            return Ok(x.as_slice().to_vec());
        }
        let step = e.hessian.lu().solve(&e.gradient).ok_or_else(|| ConfigError::Refinement(name.to_string()))?;
        x -= &step;
        if step.amax() <= 1e-16 * x.amax().max(1.0) {
            return Ok(x.as_slice().to_vec());
        }
    }
    let e = p.eval2(x.as_slice())?;
    if e.gradient.amax() <= 1e-10 {
        Ok(x.as_slice().to_vec())
    } else {
        Err(ConfigError::Refinement(name.to_string()))
    }
}

fn build_manifold(p: &Potential, spec: &ManifoldSpec) -> Result<CriticalManifold, ConfigError> {
    let m = match spec {
        ManifoldSpec::Point { name, point, refine } => {
            let x = if *refine { refine_point(p, name, point)? } else { point.clone() };
            CriticalManifold::point(name, x)?
        }
        ManifoldSpec::Sphere { name, center, radius, axes, nodes } => {
            CriticalManifold::sphere(name, center.clone(), *radius, axes.clone(), *nodes)?
        }
        ManifoldSpec::Parametrized { name, coords, ranges, periodic, nodes } => CriticalManifold::parametrized(
            name,
            coords,
            ranges.iter().map(|r| (r[0], r[1])).collect(),
            periodic.clone(),
            *nodes,
        )?,
    };
    Ok(m.verified(p, &Tolerances::default())?)
}

impl FixtureSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let spec: FixtureSpec = toml::from_str(text)?;
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(format!("{}: {m}", self.name)));
        if self.domain.lo.len() != self.dim || self.domain.hi.len() != self.dim {
            return bad("box corners must have `dim` entries");
        }
        if self.grid.len() != self.dim || self.grid.contains(&0) {
            return bad("grid must list a positive cell count per axis");
        }
        let mut names: Vec<&str> = self.minima.iter().map(|m| m.name()).chain(self.saddles.iter().map(|s| s.manifold.name())).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("manifold names must be unique");
        }
        if let Some(b) = self.solve.as_ref().and_then(|s| s.domain.as_ref()) {
            if b.lo.len() != self.dim || b.hi.len() != self.dim {
                return bad("[solve] box corners must have `dim` entries");
            }
        }
        let hs = [&self.solve.as_ref().map(|s| s.h.clone()), &self.quasimode.as_ref().map(|q| q.h.clone()), &self.simulate.as_ref().map(|s| s.h.clone())];
        if hs.iter().flat_map(|h| h.iter().flatten()).any(|&h| !(h > 0.0 && h.is_finite())) {
            return bad("every h must be positive");
        }
        Ok(())
    }
}

impl Fixture {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::build(FixtureSpec::parse(text)?)
    }

    pub fn build(spec: FixtureSpec) -> Result<Self, ConfigError> {
        let potential = Potential::parse(&spec.potential, spec.dim)?;
        let bounds = Bounds::new(spec.domain.lo.clone(), spec.domain.hi.clone())?;
        let minima = spec.minima.iter().map(|m| build_manifold(&potential, m)).collect::<Result<Vec<_>, _>>()?;
        let saddles = spec.saddles.iter().map(|s| build_manifold(&potential, &s.manifold)).collect::<Result<Vec<_>, _>>()?;
        let probe_radii = spec.saddles.iter().map(|s| s.probe_radius).collect();
        let solve_bounds = match spec.solve.as_ref().and_then(|s| s.domain.as_ref()) {
            Some(b) => Bounds::new(b.lo.clone(), b.hi.clone())?,
            None => bounds.clone(),
        };
        Ok(Fixture { spec, potential, bounds, solve_bounds, minima, saddles, probe_radii })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Grid resolution, optionally overridden by one count per axis or a
    /// single count for all axes.
    pub fn resolution(&self, grid: Option<&[usize]>) -> Result<Vec<usize>, ConfigError> {
        match grid {
            None => Ok(self.spec.grid.clone()),
            Some([n]) if self.spec.dim > 1 => Ok(vec![*n; self.spec.dim]),
            Some(g) if g.len() == self.spec.dim && !g.contains(&0) => Ok(g.to_vec()),
            Some(g) => Err(ConfigError::Invalid(format!("grid override {g:?} does not match dimension {}", self.spec.dim))),
        }
    }

    pub fn sample(&self, res: &[usize]) -> Result<GridSampling, ConfigError> {
        Ok(GridSampling::sample(&self.potential, &self.bounds, res)?)
    }

    pub fn require_minima(&self, command: &'static str) -> Result<(), ConfigError> {
        if self.minima.is_empty() {
            return Err(ConfigError::Missing { fixture: self.spec.name.clone(), what: "minima", command });
        }
        Ok(())
    }

    pub fn classify(&self, g: &GridSampling) -> Result<Vec<ClassifiedSaddle>, ConfigError> {
        self.saddles
            .iter()
            .zip(&self.probe_radii)
            .map(|(s, &r)| Ok(ClassifiedSaddle { manifold: s.clone(), verdict: classify_separating(&self.potential, s, g, r)? }))
            .collect()
    }

    pub fn label(&self, g: &GridSampling) -> Result<LabelingResult, ConfigError> {
        self.require_minima("label")?;
        let classified = self.classify(g)?;
        Ok(run_labeling(&self.potential, &self.minima, &classified, g)?)
    }

    pub fn profile(&self) -> Result<Profile, ConfigError> {
        Ok(self.potential.profile()?)
    }

    pub fn radial(&self, command: &'static str) -> Result<&RadialSpec, ConfigError> {
        self.spec.radial.as_ref().ok_or_else(|| ConfigError::Missing { fixture: self.spec.name.clone(), what: "[radial] section", command })
    }

    pub fn label_radial(&self) -> Result<RadialLabeling, ConfigError> {
        let r = self.radial("label")?;
        Ok(label_profile(&self.profile()?, &r.minima_radii, &r.saddle_radii, r.r_max, r.cells)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DW: &str = r#"
name = "dw"
dim = 1
potential = "x1^4/4 - x1^2/2 + 0.1*x1"
grid = [2000]
[box]
lo = [-2.5]
hi = [2.5]
[[minima]]
kind = "point"
name = "left"
point = [-1.0]
[[minima]]
kind = "point"
name = "right"
point = [0.9]
[[saddles]]
probe_radius = 0.3
manifold = { kind = "point", name = "s", point = [0.1] }
[solve]
h = [0.1]
[[tolerances]]
check = "ratio"
minimum = "right"
h = 0.1
max_error = 0.18
"#;

    #[test]
    fn points_are_refined_and_labeled() {
        let fx = Fixture::from_toml(DW).unwrap();
        let x = fx.minima[1].nodes[0].point[0];
        assert!((x * x * x - x + 0.1).abs() < 1e-14);
        let g = fx.sample(&fx.resolution(None).unwrap()).unwrap();
        let l = fx.label(&g).unwrap();
        assert_eq!(l.minima[l.global_minimum].name, "left");
        assert!(matches!(fx.spec.tolerances[0], ToleranceSpec::Ratio { .. }));
        assert_eq!(fx.spec.solve.as_ref().unwrap().solver, SolverKind::Grid);
    }

    #[test]
    fn malformed_fixtures_are_rejected() {
        assert!(matches!(FixtureSpec::parse(&DW.replace("grid = [2000]", "grid = [2000, 3]")), Err(ConfigError::Invalid(_))));
        assert!(matches!(FixtureSpec::parse(&DW.replace("name = \"s\"", "name = \"left\"")), Err(ConfigError::Invalid(_))));
        assert!(matches!(FixtureSpec::parse(&DW.replace("h = [0.1]", "h = [-0.1]")), Err(ConfigError::Invalid(_))));
        assert!(matches!(FixtureSpec::parse(&DW.replace("dim = 1", "dim = 1\nbogus = 2")), Err(ConfigError::Toml(_))));
    }

    #[test]
    fn missing_sections_name_the_command() {
        let fx = Fixture::from_toml(DW).unwrap();
        assert!(matches!(fx.radial("label"), Err(ConfigError::Missing { command: "label", .. })));
        assert_eq!(fx.resolution(Some(&[100])).unwrap(), vec![100]);
        assert!(fx.resolution(Some(&[100, 100])).is_err());
    }
}
