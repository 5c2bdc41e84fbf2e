//! Batch front end: `witten <command> --spec FILE [flags]`.

use crate::config::{ConfigError, Fixture, SolverKind, ToleranceSpec};
use crate::kramers::{evaluate, predictions_csv, prefactor, radial_predict, KramersError, KramersPrediction};
use crate::labeling::{check_generic, LabelingError, LabelingResult, RadialLabeling};
use crate::manifolds::{classify_index, negative_direction_field, verify_critical, ManifoldError, Tolerances};
use crate::potential::ConfinementOptions;
use crate::quasimodes::{
    build_quasimodes, interaction_csv, interaction_matrix, norm_prediction, rayleigh, residual_ratio, PhaseModel, QuasimodeError,
    QuasimodeOptions, INTERACTION_CSV_HEADER,
};
use crate::sde::{arrhenius_fit, exit_csv_rows, exit_region, simulate_exit, LangevinConfig, SdeError, EXIT_CSV_HEADER};
use crate::spectral::{
    assemble_radial, assemble_witten, count_small, self_convergence, smallest_eigs, spectrum_csv_rows, EigOptions,
    SpectralError, Spectrum, SELF_CONVERGENCE_TOL, SPECTRUM_CSV_HEADER,
};
use crate::sublevel::{GridSampling, SublevelError};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error("confinement check failed: {0}")]
    Confinement(String),
    #[error("self-convergence gate failed for `{minimum}` at h = {h}: relative change {change:.3e} > {limit:.0e}")]
    SelfConvergence { minimum: String, h: f64, change: f64, limit: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Sublevel(#[from] SublevelError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error(transparent)]
    Kramers(#[from] KramersError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Quasimode(#[from] QuasimodeError),
    #[error(transparent)]
    Sde(#[from] SdeError),
}

#[derive(Debug, Parser)]
#[command(name = "witten", version, about = "Eyring-Kramers predictions and numerical checks for Witten Laplacians")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Confinement and critical-manifold verification.
    Check,
    /// Separation verdict for every declared saddle.
    Classify,
    /// Labeling maps; writes labeling.txt.
    Label,
    /// Eyring-Kramers predictions; writes predictions.csv.
    Predict,
    /// Smallest eigenvalues; writes spectrum.csv.
    Solve,
    /// Quasimodes and interaction matrix; writes interaction.csv.
    Quasimode,
    /// Ratio table, self-convergence and tolerances; writes validate.csv.
    Validate,
    /// Langevin exit times and Arrhenius fit; writes exit_times.csv.
    Simulate,
    /// Every command above in pipeline order.
    All,
}

impl Command {
    pub const PIPELINE: [Command; 8] = [
        Command::Check,
        Command::Classify,
        Command::Label,
        Command::Predict,
        Command::Solve,
        Command::Quasimode,
        Command::Validate,
        Command::Simulate,
    ];
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// Fixture file (TOML).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Comma-separated h values overriding the fixture's lists.
    #[arg(long, global = true, value_delimiter = ',')]
    pub h: Option<Vec<f64>>,
    /// Cells per axis, one value for all axes or one per axis.
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed for the solver start block and the Langevin paths.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Turn resolution and confinement warnings into errors.
    #[arg(long, global = true)]
    pub strict: bool,
}

/// Inputs that determine every artifact. The command and output
/// directory are excluded so `all` and single commands share a hash.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub spec_sha256: String,
    pub h: Option<Vec<f64>>,
    pub grid: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub strict: bool,
}

impl RunManifest {
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("manifest serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Outcome of one command: violated tolerances, if any.
#[derive(Debug, Default)]
pub struct Outcome {
    pub violations: Vec<String>,
}

pub struct Session {
    pub fixture: Fixture,
    pub manifest: RunManifest,
    pub hash: String,
    pub out: PathBuf,
    pub res: Vec<usize>,
    pub strict: bool,
    pub seed: Option<u64>,
    h_override: Option<Vec<f64>>,
    grid_override: Option<Vec<usize>>,
    sampling: Option<GridSampling>,
    labeling: Option<LabelingResult>,
    radial_labeling: Option<RadialLabeling>,
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn grid_label(res: &[usize]) -> String {
    res.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_default()
}

impl Session {
    pub fn open(flags: &Flags) -> Result<Self, CliError> {
        let path = flags.spec.as_ref().ok_or_else(|| CliError::Usage("--spec PATH is required".into()))?;
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        let fixture = Fixture::from_toml(&text)?;
        let res = fixture.resolution(flags.grid.as_deref())?;
        let manifest = RunManifest {
            spec_sha256: hex::encode(Sha256::digest(text.as_bytes())),
            h: flags.h.clone(),
            grid: flags.grid.clone(),
            seed: flags.seed,
            strict: flags.strict,
        };
        if let Some(hs) = &flags.h {
            if hs.is_empty() || hs.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
                return Err(CliError::Usage("every --h value must be positive".into()));
            }
        }
        std::fs::create_dir_all(&flags.out).map_err(|source| CliError::Io { path: flags.out.display().to_string(), source })?;
        Ok(Session {
            hash: manifest.hash(),
            fixture,
            manifest,
            out: flags.out.clone(),
            res,
            strict: flags.strict,
            seed: flags.seed,
            h_override: flags.h.clone(),
            grid_override: flags.grid.clone(),
            sampling: None,
            labeling: None,
            radial_labeling: None,
        })
    }

    fn name(&self) -> String {
        self.fixture.name().to_string()
    }

    fn header(&self) -> String {
        format!("# manifest {}\n", self.hash)
    }

    fn emit(&self, file: &str, body: &str) -> Result<(), CliError> {
        write_file(&self.out.join(file), &format!("{}{body}", self.header()))?;
        println!("wrote {}", self.out.join(file).display());
        Ok(())
    }

    fn h_list(&self, own: Option<&Vec<f64>>, what: &'static str, command: &'static str) -> Result<Vec<f64>, CliError> {
        if let Some(h) = &self.h_override {
            return Ok(h.clone());
        }
        own.cloned().ok_or_else(|| ConfigError::Missing { fixture: self.name(), what, command }.into())
    }

    fn sampling(&mut self) -> Result<&GridSampling, CliError> {
        if self.sampling.is_none() {
            self.sampling = Some(self.fixture.sample(&self.res)?);
        }
        Ok(self.sampling.as_ref().expect("just set"))
    }

    fn labeling(&mut self) -> Result<LabelingResult, CliError> {
        if self.labeling.is_none() {
            self.sampling()?;
            let l = self.fixture.label(self.sampling.as_ref().expect("sampled"))?;
            self.labeling = Some(l);
        }
        Ok(self.labeling.clone().expect("just set"))
    }

    fn radial_labeling(&mut self) -> Result<RadialLabeling, CliError> {
        if self.radial_labeling.is_none() {
            let rl = self.fixture.label_radial()?;
            if rl.result.minima.len() != self.fixture.minima.len() {
                return Err(ConfigError::Invalid("[radial] minima_radii must follow the order of [[minima]]".into()).into());
            }
            self.radial_labeling = Some(rl);
        }
        Ok(self.radial_labeling.clone().expect("just set"))
    }

    fn solver(&self) -> SolverKind {
        self.fixture.spec.solve.as_ref().map_or(SolverKind::Grid, |s| s.solver)
    }

    fn radial_cells(&self) -> Result<usize, CliError> {
        let r = self.fixture.radial("solve")?;
        Ok(match self.grid_override.as_deref() {
            Some([n]) => *n,
            _ => r.cells,
        })
    }

    fn eig_options(&self) -> EigOptions {
        let mut o = EigOptions::default();
        if let Some(s) = self.seed {
            o.seed = s;
        }
        o
    }

    /// Predictions for the non-global minima, as (minimum index, prediction).
    fn predictions(&mut self) -> Result<Vec<(usize, KramersPrediction)>, CliError> {
        self.fixture.require_minima("predict")?;
        let mut out = Vec::new();
        if self.solver() == SolverKind::Radial {
            let rl = self.radial_labeling()?;
            let profile = self.fixture.profile()?;
            for (i, lab) in rl.result.minima.iter().enumerate() {
                if lab.barrier.is_finite() {
                    let mut pr = radial_predict(&profile, self.fixture.spec.dim, &rl, i)?;
                    pr.minimum = self.fixture.minima[i].name.clone();
                    out.push((i, pr));
                }
            }
        } else {
            let l = self.labeling()?;
            for (i, lab) in l.minima.iter().enumerate() {
                if lab.barrier.is_finite() {
                    out.push((i, prefactor(&self.fixture.potential, i, &self.fixture.minima, &self.fixture.saddles, &l)?));
                }
            }
        }
        Ok(out)
    }

    /// Smallest `k` eigenvalues at `h` on the configured solver, with the
    /// resolution scaled by `scale` (numerator, denominator).
    fn spectrum(&self, h: f64, k: usize, scale: (usize, usize)) -> Result<(Spectrum, String), CliError> {
        let opts = self.eig_options();
        let f = &self.fixture;
        match self.solver() {
            SolverKind::Radial => {
                let r = f.radial("solve")?;
                let cells = self.radial_cells()? * scale.0 / scale.1;
                let op = assemble_radial(&f.profile()?, f.spec.dim, r.r_max, cells, h)?;
                warn_all(&op.warnings, self.strict)?;
                Ok((smallest_eigs(&op, k, &opts)?, format!("radial{cells}")))
            }
            SolverKind::Grid => {
                let res: Vec<usize> = self.res.iter().map(|n| n * scale.0 / scale.1).collect();
                let op = assemble_witten(&f.potential, &f.solve_bounds, &res, h, self.strict)?;
                warn_all(&op.warnings, self.strict)?;
                Ok((smallest_eigs(&op, k, &opts)?, grid_label(&res)))
            }
        }
    }

    fn k(&self) -> usize {
        let n0 = self.fixture.minima.len().max(1);
        self.fixture.spec.solve.as_ref().and_then(|s| s.k).unwrap_or(n0 + 1).max(n0 + 1)
    }

    /// Refinement used by the self-convergence gate: doubling in 1D and
    /// for radial problems, halving on 2D and 3D grids.
    fn gate_scales(&self) -> ((usize, usize), (usize, usize)) {
        if self.solver() == SolverKind::Radial || self.fixture.spec.dim == 1 {
            ((1, 1), (2, 1))
        } else {
            ((1, 2), (1, 1))
        }
    }

    pub fn run(&mut self, command: Command) -> Result<Outcome, CliError> {
        match command {
            Command::Check => self.check(),
            Command::Classify => self.classify(),
            Command::Label => self.label(),
            Command::Predict => self.predict(),
            Command::Solve => self.solve(),
            Command::Quasimode => self.quasimode(),
            Command::Validate => self.validate(),
            Command::Simulate => self.simulate(),
            Command::All => {
                let mut total = Outcome::default();
                for c in Command::PIPELINE {
                    if self.applies(c) {
                        total.violations.extend(self.run(c)?.violations);
                    } else {
                        println!("skipping {c:?}: the fixture does not declare its inputs");
                    }
                }
                Ok(total)
            }
        }
    }

    /// Whether the fixture declares what `command` needs.
    pub fn applies(&self, command: Command) -> bool {
        let s = &self.fixture.spec;
        let has_minima = !s.minima.is_empty();
        match command {
            Command::Check | Command::Classify | Command::All => true,
            Command::Label => has_minima,
            Command::Predict | Command::Solve | Command::Validate => has_minima && s.solve.is_some(),
            Command::Quasimode => has_minima && s.quasimode.is_some(),
            Command::Simulate => has_minima && s.simulate.is_some(),
        }
    }

    fn check(&mut self) -> Result<Outcome, CliError> {
        let f = &self.fixture;
        let rep = f.potential.check_confinement(&f.bounds, &ConfinementOptions::default());
        println!(
            "confinement: {} (samples {}, min f {:.3e}, min |grad f| {:.3e}, max |Hess|/|grad|^2 {:.3e})",
            if rep.passed { "ok" } else { "FAILED" },
            rep.samples,
            rep.min_value,
            rep.min_grad_norm,
            rep.max_hessian_ratio
        );
        let tol = Tolerances::default();
        for m in f.minima.iter().chain(&f.saddles) {
            let r = verify_critical(&f.potential, m, &tol)?;
            println!("{}: {} index {}", m.name, r.summary(), classify_index(&f.potential, m)?);
        }
        if !rep.passed && self.strict {
            return Err(CliError::Confinement(format!("{rep:?}")));
        }
        Ok(Outcome::default())
    }

    fn classify(&mut self) -> Result<Outcome, CliError> {
        self.sampling()?;
        let g = self.sampling.as_ref().expect("sampled");
        for c in self.fixture.classify(g)? {
            let orient = match negative_direction_field(&self.fixture.potential, &c.manifold) {
                Ok(_) => "orientable".to_string(),
                Err(ManifoldError::NonOrientableNormalLine { .. }) => "NonOrientableNormalLine".to_string(),
                Err(e) => return Err(e.into()),
            };
            println!("{}: {} (level {:.6e}, grid {}, {orient})", c.manifold.name, c.verdict.name(), c.verdict.level, grid_label(&c.verdict.resolution));
        }
        Ok(Outcome::default())
    }

    fn label(&mut self) -> Result<Outcome, CliError> {
        let l = self.labeling()?;
        let mut body = l.report();
        let gen = check_generic(&l);
        let _ = writeln!(body, "generic {} (min margin {:e})", gen.ok, gen.min_margin);
        if self.fixture.spec.radial.is_some() {
            let rl = self.radial_labeling()?;
            let _ = writeln!(body, "radial profile labeling");
            body.push_str(&rl.result.report());
        }
        self.emit("labeling.txt", &body)?;
        Ok(Outcome::default())
    }

    fn predict(&mut self) -> Result<Outcome, CliError> {
        let hs = self.h_list(self.fixture.spec.solve.as_ref().map(|s| &s.h), "[solve] h list", "predict")?;
        let preds: Vec<KramersPrediction> = self.predictions()?.into_iter().map(|(_, p)| p).collect();
        self.emit("predictions.csv", &predictions_csv(&preds, &hs)?)?;
        Ok(Outcome::default())
    }

    fn solve(&mut self) -> Result<Outcome, CliError> {
        self.fixture.require_minima("solve")?;
        let hs = self.h_list(self.fixture.spec.solve.as_ref().map(|s| &s.h), "[solve] h list", "solve")?;
        let mut body = format!("{SPECTRUM_CSV_HEADER}\n");
        for &h in &hs {
            let (s, grid) = self.spectrum(h, self.k(), (1, 1))?;
            body.push_str(&spectrum_csv_rows(&self.name(), h, &grid, &s));
        }
        self.emit("spectrum.csv", &body)?;
        Ok(Outcome::default())
    }

    fn quasimode(&mut self) -> Result<Outcome, CliError> {
        self.fixture.require_minima("quasimode")?;
        let qs = self.fixture.spec.quasimode.clone();
        let hs = self.h_list(qs.as_ref().map(|q| &q.h), "[quasimode] section", "quasimode")?;
        let mut opts = QuasimodeOptions::default();
        if let Some(q) = &qs {
            opts.tau = q.tau;
            if let Some(t) = q.tau_fraction {
                opts.tau_fraction = t;
            }
            if q.agmon_phase {
                opts.mode = PhaseModel::AgmonBased;
            }
        }
        let l = self.labeling()?;
        let f = &self.fixture;
        let g = self.sampling.as_ref().expect("sampled by labeling");
        let n0 = l.minima.len();
        let names: Vec<String> = l.minima.iter().map(|m| m.name.clone()).collect();
        let barriers: Vec<f64> = l.minima.iter().map(|m| m.barrier).collect();
        let mut body = format!("{INTERACTION_CSV_HEADER}\n");
        for &h in &hs {
            let set = build_quasimodes(&f.potential, &f.minima, &f.saddles, &l, g, h, &opts)?;
            let op = assemble_witten(&f.potential, &f.bounds, &self.res, h, self.strict)?;
            warn_all(&op.warnings, self.strict)?;
            let spec = smallest_eigs(&op, n0, &self.eig_options())?;
            let psis: Vec<_> = set.fields.iter().collect();
            let im = interaction_matrix(&op, &psis, &barriers, &spec.vectors)?;
            body.push_str(&interaction_csv(&self.name(), h, &names, &im));
            for (i, psi) in set.fields.iter().enumerate() {
                let pred = norm_prediction(&f.potential, &f.minima[i], h, psi.global)?;
                let rows = [
                    ("rayleigh", rayleigh(&op, psi)?),
                    ("residual_ratio", residual_ratio(&op, psi)?),
                    ("norm_ratio", psi.norm_sq / pred),
                    ("solver_eigenvalue", spec.values[i]),
                    ("interaction_eigenvalue", im.eigenvalues[i]),
                ];
                for (what, v) in rows {
                    let _ = writeln!(body, "{},{h},{what},{},{},{v:.17e}", self.name(), names[i], names[i]);
                }
            }
        }
        self.emit("interaction.csv", &body)?;
        Ok(Outcome::default())
    }

    fn validate(&mut self) -> Result<Outcome, CliError> {
        let hs = self.h_list(self.fixture.spec.solve.as_ref().map(|s| &s.h), "[solve] h list", "validate")?;
        let preds = self.predictions()?;
        let n0 = self.fixture.minima.len();
        let k = self.k();
        let mut outcome = Outcome::default();
        let mut body = String::from("kind,fixture,minimum,h,index,value,reference,ratio,limit,pass\n");
        let name = self.name();
        // Predicted eigenvalues sorted ascending pair with λ_2..λ_{n0}.
        let mut order: Vec<usize> = (0..preds.len()).collect();
        let mut spectra = Vec::new();
        let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); preds.len()];
        let (coarse_scale, fine_scale) = self.gate_scales();
        for &h in &hs {
            let vals: Vec<f64> = preds.iter().map(|(_, p)| evaluate(p, h)).collect::<Result<_, _>>()?;
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
            let (s, _) = self.spectrum(h, k, coarse_scale)?;
            let (s2, _) = if coarse_scale == fine_scale { (s.clone(), String::new()) } else { self.spectrum(h, k, fine_scale)? };
            let (main, other) = if coarse_scale == (1, 1) { (&s, &s2) } else { (&s2, &s) };
            for (rank, &j) in order.iter().enumerate() {
                let idx = rank + 1;
                let mi = preds[j].0;
                let mname = &self.fixture.minima[mi].name;
                let lam = main.values[idx];
                let change = self_convergence(other.values[idx], lam);
                let gate = change <= SELF_CONVERGENCE_TOL;
                let _ = writeln!(body, "self_convergence,{name},{mname},{h},{},{change:.6e},,,{SELF_CONVERGENCE_TOL:e},{gate}", idx + 1);
                if !gate {
                    return Err(CliError::SelfConvergence { minimum: mname.clone(), h, change, limit: SELF_CONVERGENCE_TOL });
                }
                let ratio = lam / vals[j];
                let tol = self.fixture.spec.tolerances.iter().find_map(|t| match t {
                    ToleranceSpec::Ratio { minimum, h: th, max_error } if minimum == mname && (th - h).abs() <= 1e-12 * h => Some(*max_error),
                    _ => None,
                });
                let pass = tol.map(|e| (ratio - 1.0).abs() <= e);
                if pass == Some(false) {
                    outcome.violations.push(format!("ratio {mname} h={h}: {ratio:.4} outside 1 ± {}", tol.unwrap_or_default()));
                }
                let _ = writeln!(
                    body,
                    "ratio,{name},{mname},{h},{},{lam:.12e},{:.12e},{ratio:.9},{},{}",
                    idx + 1,
                    vals[j],
                    tol.map(|t| t.to_string()).unwrap_or_default(),
                    pass.map(|p| p.to_string()).unwrap_or_default()
                );
                series[j].push((h, lam));
            }
            spectra.push((h, main.clone()));
        }
        for (j, (mi, pr)) in preds.iter().enumerate() {
            if series[j].len() >= 2 {
                let xs: Vec<f64> = series[j].iter().map(|(h, _)| h.ln()).collect();
                let ys: Vec<f64> = series[j].iter().map(|(h, l)| l.ln() + 2.0 * pr.barrier / h).collect();
                let slope = fit_slope(&xs, &ys);
                let _ = writeln!(body, "exponent,{name},{},,,{slope:.9},{},,,", self.fixture.minima[*mi].name, pr.exponent);
            }
        }
        for t in &self.fixture.spec.tolerances {
            match t {
                ToleranceSpec::Count { eta0, gap_factor } => {
                    for (h, s) in &spectra {
                        let c = count_small(&s.values, *h, *eta0);
                        let pass = c.count == n0 && c.gap_ratio.is_some_and(|g| g >= *gap_factor);
                        if !pass {
                            outcome.violations.push(format!("count at h={h}: {} small eigenvalues, gap {}", c.count, fmt_opt(c.gap_ratio)));
                        }
                        let _ = writeln!(body, "count,{name},,{h},,{},{n0},{},{gap_factor},{pass}", c.count, fmt_opt(c.gap_ratio));
                    }
                }
                ToleranceSpec::Eigenvalues { h, expected, rel } => {
                    let s = match spectra.iter().find(|(hh, _)| (hh - h).abs() <= 1e-12 * h) {
                        Some((_, s)) => s.clone(),
                        None => self.spectrum(*h, expected.len().max(k), (1, 1))?.0,
                    };
                    for (i, e) in expected.iter().enumerate() {
                        let Some(&v) = s.values.get(i) else {
                            outcome.violations.push(format!("eigenvalue {} at h={h} not computed", i + 1));
                            continue;
                        };
                        let err = (v - e).abs() / e.abs().max(s.floor);
                        let pass = err <= *rel;
                        if !pass {
                            outcome.violations.push(format!("eigenvalue {} at h={h}: {v:.9e} vs {e}", i + 1));
                        }
                        let _ = writeln!(body, "eigenvalue,{name},,{h},{},{v:.12e},{e},{err:.3e},{rel},{pass}", i + 1);
                    }
                }
                ToleranceSpec::Ratio { .. } | ToleranceSpec::Arrhenius { .. } => {}
            }
        }
        self.emit("validate.csv", &body)?;
        Ok(outcome)
    }

    fn simulate(&mut self) -> Result<Outcome, CliError> {
        let sim = self
            .fixture
            .spec
            .simulate
            .clone()
            .ok_or_else(|| ConfigError::Missing { fixture: self.name(), what: "[simulate] section", command: "simulate" })?;
        let hs = self.h_list(Some(&sim.h), "[simulate] h list", "simulate")?;
        let l = self.labeling()?;
        let mi = l
            .minima
            .iter()
            .position(|m| m.name == sim.minimum)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown minimum `{}` in [simulate]", sim.minimum)))?;
        let f = &self.fixture;
        let g = self.sampling.as_ref().expect("sampled by labeling");
        let barrier = l.minima[mi].barrier;
        if !barrier.is_finite() {
            return Err(SdeError::NoBarrier(sim.minimum.clone()).into());
        }
        let pred = prefactor(&f.potential, mi, &f.minima, &f.saddles, &l)?;
        let seed = self.seed.or(sim.seed).unwrap_or(0);
        let region = exit_region(&f.minima[mi], &l, mi, g, sim.margin)?;
        let mut body = format!("{EXIT_CSV_HEADER}\n");
        let mut samples = Vec::new();
        for &h in &hs {
            let lam = evaluate(&pred, h)?;
            let horizon = sim.horizon_factor * h / lam;
            let cfg = LangevinConfig::new(&f.potential, g, region.clone(), h, horizon, sim.paths, seed)?;
            let s = simulate_exit(&f.potential, &f.minima[mi], g, &cfg)?;
            println!("h = {h}: dt {:.3e}, mean exit time {:.6e}, censored {}", s.dt, s.mean_exit_time(), s.censored_count());
            body.push_str(&exit_csv_rows(&self.name(), &s));
            samples.push(s);
        }
        self.emit("exit_times.csv", &body)?;
        let mut outcome = Outcome::default();
        let mut distinct = hs.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() >= 3 {
            let fit = arrhenius_fit(&samples, barrier, seed)?;
            println!("arrhenius slope {:.6} (95% CI {:.6}..{:.6}), 2S = {:.6}", fit.slope, fit.ci.0, fit.ci.1, fit.two_s);
            self.emit("arrhenius.json", &fit.report())?;
            for t in &self.fixture.spec.tolerances {
                if let ToleranceSpec::Arrhenius { max_relative_error } = t {
                    if fit.relative_error > *max_relative_error {
                        outcome.violations.push(format!("arrhenius slope {:.4} vs 2S {:.4}", fit.slope, fit.two_s));
                    }
                }
            }
        }
        Ok(outcome)
    }
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn warn_all(warnings: &[String], strict: bool) -> Result<(), CliError> {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if strict && !warnings.is_empty() {
        return Err(CliError::Usage(format!("strict mode: {}", warnings.join("; "))));
    }
    Ok(())
}

/// Exit codes: 0 success, 1 hard error, 2 usage error, 3 tolerance violated.
pub fn run(cli: Cli) -> ExitCode {
    let mut session = match Session::open(&cli.flags) {
        Ok(s) => s,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match session.run(cli.command) {
        Ok(o) if o.violations.is_empty() => ExitCode::SUCCESS,
        Ok(o) => {
            for v in &o.violations {
                eprintln!("tolerance violated: {v}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
