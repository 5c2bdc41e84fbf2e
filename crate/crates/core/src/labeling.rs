//! The labeling of minimal manifolds by barrier levels: the regions E(m),
//! the saddle sets j(m), the levels sigma(m) and the barriers S(m).

use crate::manifolds::{negative_directions, CriticalManifold, ManifoldError};
use crate::potential::expr::EvalError;
use crate::potential::{Bounds, Potential, Profile};
use crate::sublevel::{components, ComponentMap, GridSampling, Separation, SeparationVerdict, SublevelError};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("minimum `{0}` lies in no component of the sublevel set (box too small?)")]
    MinimumOutside(String),
    #[error("minimum `{name}` is within one cell of the boundary of its component at level {sigma}")]
    NoMargin { name: String, sigma: f64 },
    #[error("nodes of minimum `{0}` fall in different components")]
    SplitMinimum(String),
    #[error("separating value {0} has no new component")]
    NoNewComponent(f64),
    #[error("saddle `{0}` is not classified as separating")]
    NotSeparating(String),
    #[error("no minima declared")]
    NoMinima,
    #[error("minimum `{0}` was never labeled")]
    Unlabeled(String),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Sublevel(#[from] SublevelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A saddle together with its separation verdict.
#[derive(Debug, Clone)]
pub struct ClassifiedSaddle {
    pub manifold: CriticalManifold,
    pub verdict: SeparationVerdict,
}

/// A minimum as seen by the grid: its value and the cells of its nodes.
#[derive(Debug, Clone)]
pub struct MinimumSite {
    pub name: String,
    pub value: f64,
    pub cells: Vec<usize>,
}

/// A separating saddle as seen by the grid.
#[derive(Debug, Clone)]
pub struct SaddleSite {
    pub name: String,
    pub value: f64,
    /// How far below `value` the sublevel set is probed.
    pub offset: f64,
    /// One cell on each side of the saddle.
    pub side_cells: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaddleRef {
    /// The fictive saddle at infinite height attached to the global minimum.
    Fictive,
    Saddle(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimumLabel {
    pub name: String,
    pub value: f64,
    /// Position in the list of levels; 0 is the infinite level.
    pub level: usize,
    pub sigma: f64,
    pub barrier: f64,
    /// Component id of E(m) at its level; `None` for the whole space.
    pub component: Option<usize>,
    pub saddles: Vec<SaddleRef>,
    /// Other minima contained in E(m).
    pub region_minima: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelRecord {
    pub sigma: f64,
    pub probe: f64,
    /// Pairs (minimum, component id) selected at this level.
    pub families: Vec<(usize, Option<usize>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelingResult {
    pub levels: Vec<LevelRecord>,
    pub minima: Vec<MinimumLabel>,
    pub saddle_names: Vec<String>,
    pub saddle_values: Vec<f64>,
    pub global_minimum: usize,
    /// Selections where several minima shared the lowest value.
    pub ties: Vec<String>,
    pub resolution: Vec<usize>,
}

fn same_level(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12)
}

fn lowest(values: &[f64], candidates: &[usize]) -> (usize, bool) {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if values[c] < values[best] && !same_level(values[c], values[best]) {
            best = c;
        }
    }
    let tie = candidates.iter().any(|&c| c != best && same_level(values[c], values[best]));
    (best, tie)
}

fn component_of(map: &ComponentMap, g: &GridSampling, site: &MinimumSite) -> Result<Option<usize>, LabelingError> {
    let mut label: Option<i32> = None;
    for &c in &site.cells {
        let l = map.labels[c];
        match label {
            None => label = Some(l),
            Some(prev) if prev != l => return Err(LabelingError::SplitMinimum(site.name.clone())),
            _ => {}
        }
    }
    let l = label.unwrap_or(-1);
    if l < 0 {
        return Ok(None);
    }
    let strides = g.strides();
    let mut margin_ok = true;
    g.for_each_neighbor(site.cells[0], &strides, |nb| {
        if map.labels[nb] != l {
            margin_ok = false;
        }
    });
    if !margin_ok {
        return Err(LabelingError::NoMargin { name: site.name.clone(), sigma: map.sigma });
    }
    Ok(Some(l as usize))
}

/// The labeling induction on grid sites.
pub fn label_sites(g: &GridSampling, minima: &[MinimumSite], saddles: &[SaddleSite]) -> Result<LabelingResult, LabelingError> {
    if minima.is_empty() {
        return Err(LabelingError::NoMinima);
    }
    let values: Vec<f64> = minima.iter().map(|m| m.value).collect();
    let all: Vec<usize> = (0..minima.len()).collect();
    let (global, tie) = lowest(&values, &all);
    let mut ties = Vec::new();
    if tie {
        ties.push(format!("global minimum chosen as `{}` among equal values", minima[global].name));
    }
    let mut labels: Vec<Option<MinimumLabel>> = vec![None; minima.len()];
    labels[global] = Some(MinimumLabel {
        name: minima[global].name.clone(),
        value: values[global],
        level: 0,
        sigma: f64::INFINITY,
        barrier: f64::INFINITY,
        component: None,
        saddles: vec![SaddleRef::Fictive],
        region_minima: all.iter().copied().filter(|&i| i != global).collect(),
    });
    let mut levels = vec![LevelRecord { sigma: f64::INFINITY, probe: f64::INFINITY, families: vec![(global, None)] }];

    let mut order: Vec<usize> = (0..saddles.len()).collect();
    order.sort_by(|&a, &b| saddles[b].value.total_cmp(&saddles[a].value));
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &s in &order {
        match clusters.last_mut() {
            Some(c) if same_level(saddles[c[0]].value, saddles[s].value) => c.push(s),
            _ => clusters.push(vec![s]),
        }
    }

    for cluster in clusters {
        let sigma = saddles[cluster[0]].value;
        let probe = cluster.iter().map(|&s| saddles[s].value - saddles[s].offset).fold(f64::INFINITY, f64::min);
        let map = components(g, probe);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); map.count];
        for (i, site) in minima.iter().enumerate() {
            if site.value >= probe {
                continue;
            }
            match component_of(&map, g, site)? {
                Some(c) => members[c].push(i),
                None => return Err(LabelingError::MinimumOutside(site.name.clone())),
            }
        }
        let mut families = Vec::new();
        for (c, inside) in members.iter().enumerate() {
            if inside.is_empty() || inside.iter().any(|&i| labels[i].is_some()) {
                continue;
            }
            let (chosen, tie) = lowest(&values, inside);
            if tie {
                ties.push(format!("`{}` chosen among equal minima at level {sigma}", minima[chosen].name));
            }
            let mut js: Vec<SaddleRef> = cluster
                .iter()
                .copied()
                .filter(|&s| saddles[s].side_cells.iter().any(|&cell| map.labels[cell] == c as i32))
                .map(SaddleRef::Saddle)
                .collect();
            js.sort_by_key(|r| match r {
                SaddleRef::Saddle(i) => *i,
                SaddleRef::Fictive => usize::MAX,
            });
            if js.is_empty() {
                return Err(LabelingError::NoNewComponent(sigma));
            }
            labels[chosen] = Some(MinimumLabel {
                name: minima[chosen].name.clone(),
                value: values[chosen],
                level: levels.len(),
                sigma,
                barrier: sigma - values[chosen],
                component: Some(c),
                saddles: js,
                region_minima: inside.iter().copied().filter(|&i| i != chosen).collect(),
            });
            families.push((chosen, Some(c)));
        }
        if families.is_empty() {
            return Err(LabelingError::NoNewComponent(sigma));
        }
        levels.push(LevelRecord { sigma, probe, families });
    }

    let minima_labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| LabelingError::Unlabeled(minima[i].name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelingResult {
        levels,
        minima: minima_labels,
        saddle_names: saddles.iter().map(|s| s.name.clone()).collect(),
        saddle_values: saddles.iter().map(|s| s.value).collect(),
        global_minimum: global,
        ties,
        resolution: g.res.clone(),
    })
}

/// Labels declared minima and separating saddles of `p` on the grid `g`.
pub fn run_labeling(
    p: &Potential,
    minima: &[CriticalManifold],
    saddles: &[ClassifiedSaddle],
    g: &GridSampling,
) -> Result<LabelingResult, LabelingError> {
    let mut msites = Vec::with_capacity(minima.len());
    for m in minima {
        let cells = m
            .nodes
            .iter()
            .map(|n| g.cell_of(&n.point).ok_or_else(|| LabelingError::MinimumOutside(m.name.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        msites.push(MinimumSite { name: m.name.clone(), value: m.critical_value(p)?, cells });
    }
    let mut ssites = Vec::with_capacity(saddles.len());
    for s in saddles {
        let (plus_point, minus_point) = match &s.verdict.separation {
            Separation::Separating { plus_point, minus_point, .. } => (plus_point, minus_point),
            _ => return Err(LabelingError::NotSeparating(s.manifold.name.clone())),
        };
        let value = s.manifold.critical_value(p)?;
        let cell = |x: &Vec<f64>| g.cell_of(x).ok_or_else(|| LabelingError::NotSeparating(s.manifold.name.clone()));
        ssites.push(SaddleSite {
            name: s.manifold.name.clone(),
            value,
            offset: value - s.verdict.level,
            side_cells: [cell(plus_point)?, cell(minus_point)?],
        });
    }
    label_sites(g, &msites, &ssites)
}

/// Labeling of a radial potential through its profile on `[0, r_max]`.
/// Minima and saddles are given by their radii; radius 0 stands for the
/// center point.
#[derive(Debug, Clone)]
pub struct RadialLabeling {
    pub result: LabelingResult,
    pub minima_radii: Vec<f64>,
    pub saddle_radii: Vec<f64>,
}

pub fn label_profile(
    profile: &Profile,
    minima_radii: &[f64],
    saddle_radii: &[f64],
    r_max: f64,
    cells: usize,
) -> Result<RadialLabeling, LabelingError> {
    let dr = r_max / cells as f64;
    let values = (0..cells)
        .map(|i| profile.value((i as f64 + 0.5) * dr))
        .collect::<Result<Vec<_>, _>>()?;
    let g = GridSampling::from_values(Bounds::new(vec![0.0], vec![r_max]).map_err(|_| LabelingError::NoMinima)?, vec![cells], values)?;
    let mut critical: Vec<f64> = minima_radii.iter().chain(saddle_radii).copied().collect();
    critical.sort_by(f64::total_cmp);
    let mut msites = Vec::new();
    for (i, &r) in minima_radii.iter().enumerate() {
        let cell = g.cell_of(&[r]).ok_or_else(|| LabelingError::MinimumOutside(format!("r={r}")))?;
        msites.push(MinimumSite { name: format!("m{i}(r={r})"), value: profile.value(r)?, cells: vec![cell] });
    }
    let mut ssites = Vec::new();
    for (i, &s) in saddle_radii.iter().enumerate() {
        let gap = critical
            .iter()
            .filter(|&&c| c != s)
            .map(|c| (c - s).abs())
            .fold(s, f64::min)
            .min(r_max - s);
        let half = (0.25 * gap).max(2.0 * dr);
        let (_, _, f2) = profile.derivatives(s)?;
        let value = profile.value(s)?;
        let cell = |r: f64| g.cell_of(&[r]).ok_or_else(|| LabelingError::NotSeparating(format!("r={s}")));
        ssites.push(SaddleSite {
            name: format!("s{i}(r={s})"),
            value,
            offset: g.saddle_offset(f2.abs()),
            side_cells: [cell(s + half)?, cell(s - half)?],
        });
    }
    let result = label_sites(&g, &msites, &ssites)?;
    Ok(RadialLabeling { result, minima_radii: minima_radii.to_vec(), saddle_radii: saddle_radii.to_vec() })
}

/// Result of the genericity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenericityReport {
    pub ok: bool,
    /// Smallest `f(m') - f(m)` over minima `m'` inside E(m).
    pub min_margin: f64,
    /// (m, m') pairs where m' in E(m) is not strictly higher.
    pub unique_minimum_violations: Vec<(usize, usize)>,
    /// (m, m', saddle) triples where the saddle sets overlap.
    pub overlapping_saddles: Vec<(usize, usize, usize)>,
}

pub fn check_generic(l: &LabelingResult) -> GenericityReport {
    let mut rep =
        GenericityReport { ok: true, min_margin: f64::INFINITY, unique_minimum_violations: Vec::new(), overlapping_saddles: Vec::new() };
    for (i, m) in l.minima.iter().enumerate() {
        for &o in &m.region_minima {
            let margin = l.minima[o].value - m.value;
            rep.min_margin = rep.min_margin.min(margin);
            if margin <= 0.0 || same_level(l.minima[o].value, m.value) {
                rep.unique_minimum_violations.push((i, o));
            }
        }
    }
    for i in 0..l.minima.len() {
        for j in i + 1..l.minima.len() {
            for s in &l.minima[i].saddles {
                if let SaddleRef::Saddle(k) = s {
                    if l.minima[j].saddles.contains(s) {
                        rep.overlapping_saddles.push((i, j, *k));
                    }
                }
            }
        }
    }
    rep.ok = rep.unique_minimum_violations.is_empty() && rep.overlapping_saddles.is_empty();
    rep
}

impl LabelingResult {
    pub fn saddle_label(&self, r: &SaddleRef) -> String {
        match r {
            SaddleRef::Fictive => "fictive".to_string(),
            SaddleRef::Saddle(i) => self.saddle_names[*i].clone(),
        }
    }

    /// Human-readable tree of levels and the final maps.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "grid {:?}", self.resolution);
        for (i, lvl) in self.levels.iter().enumerate() {
            let _ = writeln!(s, "level {} sigma {:e}", i + 1, lvl.sigma);
            for (m, c) in &lvl.families {
                let comp = c.map_or("whole space".to_string(), |c| format!("component {c}"));
                let _ = writeln!(s, "  E: {comp} -> minimum {}", self.minima[*m].name);
            }
        }
        for m in &self.minima {
            let js: Vec<String> = m.saddles.iter().map(|r| self.saddle_label(r)).collect();
            let _ = writeln!(
                s,
                "minimum {} f {:e} sigma {:e} S {:e} j {{{}}}",
                m.name,
                m.value,
                m.sigma,
                m.barrier,
                js.join(", ")
            );
        }
        for t in &self.ties {
            let _ = writeln!(s, "tie: {t}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("labeling serializes")
    }

    /// Minima ordered by nondecreasing barrier, the global minimum last.
    pub fn barrier_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.minima.len()).collect();
        idx.sort_by(|&a, &b| self.minima[a].barrier.total_cmp(&self.minima[b].barrier).then(a.cmp(&b)));
        idx
    }
}

/// Largest negative curvature magnitude along a saddle.
pub fn saddle_curvature(p: &Potential, gamma: &CriticalManifold) -> Result<f64, ManifoldError> {
    Ok(negative_directions(p, gamma)?.0.iter().fold(0.0, |a, m| a.max(m.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sublevel::classify_separating;

    fn pipeline(expr: &str, minima: &[f64], saddles: &[f64], half: f64, n: usize) -> LabelingResult {
        let p = Potential::parse(expr, 1).unwrap();
        let g = GridSampling::sample(&p, &Bounds::cube(1, half), &[n]).unwrap();
        let ms: Vec<_> = minima.iter().enumerate().map(|(i, &x)| CriticalManifold::point(&format!("m{i}"), vec![x]).unwrap()).collect();
        let ss: Vec<_> = saddles
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let m = CriticalManifold::point(&format!("s{i}"), vec![x]).unwrap();
                let verdict = classify_separating(&p, &m, &g, 0.2).unwrap();
                ClassifiedSaddle { manifold: m, verdict }
            })
            .collect();
        run_labeling(&p, &ms, &ss, &g).unwrap()
    }

    fn newton(f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64, mut x: f64) -> f64 {
        for _ in 0..100 {
            x -= f1(x) / f2(x);
        }
        x
    }

    #[test]
    fn tilted_double_well() {
        let f = |x: f64| x.powi(4) / 4.0 - x * x / 2.0 + 0.1 * x;
        let f1 = |x: f64| x.powi(3) - x + 0.1;
        let f2 = |x: f64| 3.0 * x * x - 1.0;
        let (a, s, b) = (newton(f1, f2, -1.0), newton(f1, f2, 0.1), newton(f1, f2, 1.0));
        let l = pipeline("x1^4/4 - x1^2/2 + 0.1*x1", &[a, b], &[s], 2.5, 2000);
        assert_eq!(l.global_minimum, 0);
        assert!(l.minima[0].barrier.is_infinite());
        assert_eq!(l.minima[0].saddles, vec![SaddleRef::Fictive]);
        assert!((l.minima[1].barrier - (f(s) - f(b))).abs() < 1e-12);
        assert_eq!(l.minima[1].saddles, vec![SaddleRef::Saddle(0)]);
        assert!(check_generic(&l).ok);
        assert!(l.report().contains("minimum m1"));
        assert!(l.to_json().contains("\"barrier\""));
    }

    #[test]
    fn single_minimum_has_fictive_saddle() {
        let l = pipeline("x1^2", &[0.0], &[], 2.0, 100);
        assert_eq!(l.minima[0].saddles, vec![SaddleRef::Fictive]);
        assert!(l.minima[0].barrier.is_infinite());
    }

    #[test]
    fn symmetric_double_well_is_not_generic() {
        let l = pipeline("(x1^2-1)^2/4", &[-1.0, 1.0], &[0.0], 2.0, 1000);
        let rep = check_generic(&l);
        assert!(!rep.ok);
        assert_eq!(rep.unique_minimum_violations, vec![(0, 1)]);
        assert!(!l.ties.is_empty());
    }

    #[test]
    fn mexican_hat_profile() {
        let p = Potential::parse("r^6/6 - r^4/2 + 0.35*r^2", 2).unwrap();
        let prof = p.profile().unwrap();
        let s2 = (1.0 - 0.3f64.sqrt()).sqrt();
        let r1 = (1.0 + 0.3f64.sqrt()).sqrt();
        let l = label_profile(&prof, &[0.0, r1], &[s2], 2.0, 4000).unwrap();
        assert_eq!(l.result.global_minimum, 1);
        let s = prof.value(s2).unwrap();
        assert!((l.result.minima[0].barrier - s).abs() < 1e-15);
        assert!((s - 0.07145).abs() < 1e-4);
        assert_eq!(l.result.minima[0].saddles, vec![SaddleRef::Saddle(0)]);
        assert!(check_generic(&l.result).ok);
    }

    #[test]
    fn missing_minimum_is_an_error() {
        let p = Potential::parse("(x1^2-1)^2/4", 1).unwrap();
        let g = GridSampling::sample(&p, &Bounds::cube(1, 2.0), &[100]).unwrap();
        let m = CriticalManifold::point("far", vec![5.0]).unwrap();
        assert!(matches!(run_labeling(&p, &[m], &[], &g), Err(LabelingError::MinimumOutside(_))));
    }
}
