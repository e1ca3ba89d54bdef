//! Symmetric positive definite banded matrices with an in-place Cholesky
//! factorization.

use crate::scalar::Real;

/// Lower band storage: `data[i * (b + 1) + k]` holds `A[i][i - k]`.
#[derive(Clone, Debug)]
pub(crate) struct BandedSpd<T> {
    n: usize,
    b: usize,
    data: Vec<T>,
}

impl<T: Real> BandedSpd<T> {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        let b = bandwidth.min(n.saturating_sub(1));
        BandedSpd {
            n,
            b,
            data: vec![T::zero(); n * (b + 1)],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.b);
        i * (self.b + 1) + (i - j)
    }

    /// Adds `v` to `A[i][j]` (and implicitly `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] = self.data[k] + v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.b {
            T::zero()
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Replaces row and column `i` by the identity row.
    pub fn pin(&mut self, i: usize) {
        let lo = i.saturating_sub(self.b);
        let hi = (i + self.b).min(self.n - 1);
        for j in lo..=hi {
            if j != i {
                let (a, b) = if i > j { (i, j) } else { (j, i) };
                let k = self.idx(a, b);
                self.data[k] = T::zero();
            }
        }
        let k = self.idx(i, i);
        self.data[k] = T::one();
    }

    #[cfg(test)]
    pub fn mul(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.b);
            for j in lo..i {
                let a = self.data[self.idx(i, j)];
                y[i] = y[i] + a * x[j];
                y[j] = y[j] + a * x[i];
            }
            y[i] = y[i] + self.data[self.idx(i, i)] * x[i];
        }
        y
    }

    /// Cholesky factor `L` with `A = L L^T`, or `None` when a pivot is not
    /// positive.
    pub fn cholesky(mut self) -> Option<BandedCholesky<T>> {
        let (n, b) = (self.n, self.b);
        for j in 0..n {
            let lo = j.saturating_sub(b);
            let mut d = self.data[self.idx(j, j)];
            for k in lo..j {
                let l = self.data[self.idx(j, k)];
                d = d - l * l;
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            let jj = self.idx(j, j);
            self.data[jj] = d;
            for i in j + 1..=(j + b).min(n - 1) {
                let lo_i = i.saturating_sub(b).max(lo);
                let mut s = self.data[self.idx(i, j)];
                for k in lo_i..j {
                    s = s - self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let ij = self.idx(i, j);
                self.data[ij] = s / d;
            }
        }
        Some(BandedCholesky { factor: self })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BandedCholesky<T> {
    factor: BandedSpd<T>,
}

impl<T: Real> BandedCholesky<T> {
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let f = &self.factor;
        let (n, b) = (f.n, f.b);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = y[i];
            for k in lo..i {
                s = s - f.data[f.idx(i, k)] * y[k];
            }
            y[i] = s / f.data[f.idx(i, i)];
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = y[i];
            for k in i + 1..=hi {
                s = s - f.data[f.idx(k, i)] * y[k];
            }
            y[i] = s / f.data[f.idx(i, i)];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal() {
        let n = 10;
        let mut a = BandedSpd::<f64>::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.mul(&x);
        let sol = a.cholesky().unwrap().solve(&b);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_band_matches_dense_product() {
        let n = 12;
        let b = 4;
        let mut a = BandedSpd::<f64>::zeros(n, b);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64);
            for j in i.saturating_sub(b)..i {
                a.add(i, j, 0.3 * ((i * j) as f64).cos());
            }
        }
        a.pin(5);
        assert_eq!(a.get(5, 3), 0.0);
        let x: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let rhs = a.mul(&x);
        let sol = a.clone().cholesky().unwrap().solve(&rhs);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = BandedSpd::<f64>::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(a.cholesky().is_none());
    }
}
