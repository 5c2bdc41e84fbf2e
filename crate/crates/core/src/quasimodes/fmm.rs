//! First-order fast marching for `|∇φ| = s` on a cell-centered grid. The
//! speed in each update is the mean of the cell's speed and that of its
//! upwind neighbors, which makes the 1D march a trapezoidal rule.

use crate::sublevel::GridSampling;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    value: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.value.total_cmp(&self.value).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Upwind solve of `Σ_k ((φ - a_k)/dx_k)^2 = s^2` using the smallest
/// neighbor values `a_k` per axis.
fn local_update(a: &mut [(f64, f64)], s: f64) -> f64 {
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut m = a.len();
    while m > 0 {
        let (mut qa, mut qb, mut qc) = (0.0, 0.0, -s * s);
        for &(v, dx) in &a[..m] {
            let w = 1.0 / (dx * dx);
            qa += w;
            qb += w * v;
            qc += w * v * v;
        }
        let disc = qb * qb - qa * qc;
        if disc >= 0.0 {
            let phi = (qb + disc.sqrt()) / qa;
            if phi >= a[m - 1].0 {
                return phi;
            }
        }
        m -= 1;
    }
    f64::INFINITY
}

/// Arrival times from `seeds` with speed field `speed` (cells with a
/// non-finite speed are never entered). Unreached cells stay infinite.
pub fn fast_marching(g: &GridSampling, speed: &[f64], seeds: &[(usize, f64)]) -> Vec<f64> {
    let n = g.len();
    let d = g.dim();
    let strides = g.strides();
    let dx: Vec<f64> = (0..d).map(|k| g.spacing(k)).collect();
    let mut phi = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(c, v) in seeds {
        if v < phi[c] {
            phi[c] = v;
            heap.push(Entry { value: v, cell: c });
        }
    }
    let mut coords = vec![0usize; d];
    let mut axis_vals: Vec<(f64, f64)> = Vec::with_capacity(d);
    while let Some(Entry { value, cell }) = heap.pop() {
        if known[cell] || value > phi[cell] {
            continue;
        }
        known[cell] = true;
        let mut rem = cell;
        for k in 0..d {
            coords[k] = rem % g.res[k];
            rem /= g.res[k];
        }
        for k in 0..d {
            for dir in [-1i64, 1] {
                let c = coords[k] as i64 + dir;
                if c < 0 || c >= g.res[k] as i64 {
                    continue;
                }
                let nb = if dir < 0 { cell - strides[k] } else { cell + strides[k] };
                if known[nb] || !speed[nb].is_finite() {
                    continue;
                }
                axis_vals.clear();
                let mut upwind_speed = 0.0;
                let mut ncoords = coords.clone();
                ncoords[k] = c as usize;
                for a in 0..d {
                    let mut best = (f64::INFINITY, 0.0);
                    if ncoords[a] > 0 && known[nb - strides[a]] && phi[nb - strides[a]] < best.0 {
                        best = (phi[nb - strides[a]], speed[nb - strides[a]]);
                    }
                    if ncoords[a] + 1 < g.res[a] && known[nb + strides[a]] && phi[nb + strides[a]] < best.0 {
                        best = (phi[nb + strides[a]], speed[nb + strides[a]]);
                    }
                    if best.0.is_finite() {
                        axis_vals.push((best.0, dx[a]));
                        upwind_speed += best.1;
                    }
                }
                let s = 0.5 * (speed[nb] + upwind_speed / axis_vals.len() as f64);
                let cand = local_update(&mut axis_vals, s);
                if cand < phi[nb] {
                    phi[nb] = cand;
                    heap.push(Entry { value: cand, cell: nb });
                }
            }
        }
    }
    phi
}

/// Approximate Euclidean distance to the cells flagged in `mask`.
pub fn distance_to_mask(g: &GridSampling, mask: &[bool]) -> Vec<f64> {
    let speed = vec![1.0; g.len()];
    let seeds: Vec<(usize, f64)> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| (i, 0.0)).collect();
    fast_marching(g, &speed, &seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Bounds;

    #[test]
    fn one_dimensional_arrival_is_cumulative() {
        let g = GridSampling::from_values(Bounds::cube(1, 1.0), vec![100], vec![0.0; 100]).unwrap();
        let speed = vec![2.0; 100];
        let phi = fast_marching(&g, &speed, &[(50, 0.0)]);
        assert!((phi[99] - 2.0 * 49.0 * 0.02).abs() < 1e-12);
        assert!((phi[0] - 2.0 * 50.0 * 0.02).abs() < 1e-12);
    }

    #[test]
    fn planar_front_is_exact_and_blocked_cells_are_skipped() {
        let g = GridSampling::from_values(Bounds::cube(2, 1.0), vec![20, 20], vec![0.0; 400]).unwrap();
        let mask: Vec<bool> = (0..400).map(|i| i % 20 == 0).collect();
        let d = distance_to_mask(&g, &mask);
        for j in 0..20 {
            assert!((d[j * 20 + 7] - 0.7).abs() < 1e-12);
        }
        let mut speed = vec![1.0; 400];
        for j in 0..20 {
            speed[j * 20 + 10] = f64::NAN;
        }
        let seeds: Vec<(usize, f64)> = (0..20).map(|j| (j * 20, 0.0)).collect();
        let phi = fast_marching(&g, &speed, &seeds);
        assert!(phi[15].is_infinite());
        assert!(phi[9].is_finite());
    }
}
