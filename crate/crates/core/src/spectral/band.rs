//! Symmetric banded matrices and their Cholesky factorization.

/// Lower band of a symmetric matrix, stored row by row: row `i` holds the
/// entries of columns `i-b ..= i`.
#[derive(Debug, Clone)]
pub struct SymBand {
    n: usize,
    b: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, b: usize) -> Self {
        SymBand { n, b, data: vec![0.0; n * (b + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b);
        i * (self.b + 1) + (j + self.b - i)
    }

    /// Adds `v` to entry `(i, j)` (and its mirror).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        let k = self.at(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.b {
            return 0.0;
        }
        self.data[self.at(i, j)]
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn gershgorin(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.b);
            for j in lo..=i {
                let v = self.data[self.at(i, j)].abs();
                sums[i] += v;
                if j != i {
                    sums[j] += v;
                }
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Cholesky factor of `self + shift I`, or `None` if not positive
    /// definite in floating point.
    pub fn cholesky(&self, shift: f64) -> Option<BandCholesky> {
        let (n, b) = (self.n, self.b);
        let w = b + 1;
        let mut l = self.data.clone();
        for i in 0..n {
            l[i * w + b] += shift;
        }
        for i in 0..n {
            let lo = i.saturating_sub(b);
            for j in lo..=i {
                let klo = lo;
                let len = j - klo;
                let ri = i * w + (klo + b - i);
                let rj = j * w + (klo + b - j);
                let mut s = l[i * w + (j + b - i)];
                let (a, c) = (&l[ri..ri + len], &l[rj..rj + len]);
                s -= a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i * w + b] = s.sqrt();
                } else {
                    l[i * w + (j + b - i)] = s / l[j * w + b];
                }
            }
        }
        Some(BandCholesky { n, b, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    b: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `(L L^T) x = rhs` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, b) = (self.n, self.b);
        let w = b + 1;
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let row = &self.l[i * w + (lo + b - i)..i * w + b];
            let s: f64 = row.iter().zip(&x[lo..i]).map(|(a, y)| a * y).sum();
            x[i] = (x[i] - s) / self.l[i * w + b];
        }
        for i in (0..n).rev() {
            x[i] /= self.l[i * w + b];
            let zi = x[i];
            let lo = i.saturating_sub(b);
            let row = &self.l[i * w + (lo + b - i)..i * w + b];
            for (y, a) in x[lo..i].iter_mut().zip(row) {
                *y -= a * zi;
            }
        }
    }
}
