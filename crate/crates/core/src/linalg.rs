//! Envelope (skyline) storage and Cholesky factorization for symmetric
//! positive-definite matrices.
//!
//! Row `i` stores the entries from its first structural nonzero column up to
//! the diagonal. Cholesky fill-in never leaves the envelope, so a time-ordered
//! MPC chain factorizes in `O(n * bandwidth^2)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// Zero matrix with the given envelope. Requires `first[i] <= i`.
    pub fn with_envelope(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(acc);
            acc += i + 1 - f;
        }
        start.push(acc);
        SkylineMatrix { first, start, data: vec![0.0; acc] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// First stored column of row `i`.
    pub fn first_column(&self, i: usize) -> usize {
        self.first[i]
    }

    /// Number of stored lower-triangle entries.
    pub fn stored(&self) -> usize {
        self.data.len()
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if j <= i { (i, j) } else { (j, i) };
        (c >= self.first[r]).then(|| self.start[r] + c - self.first[r])
    }

    /// Symmetric read; zero outside the envelope.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` at `(i, j)` with `j <= i`. Panics outside the envelope.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j).expect("entry outside envelope");
        self.data[k] += v;
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.dim() {
            let k = self.start[i] + i - self.first[i];
            self.data[k] += v;
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.data[self.start[i] + i - self.first[i]]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.get(i, j))
    }

    /// In-place Cholesky `A = L L^T`, keeping `L` in the envelope.
    pub fn cholesky(mut self) -> Result<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..=i {
                let fj = self.first[j];
                let sj = self.start[j];
                let lo = fi.max(fj);
                let mut s = self.data[si + j - fi];
                for k in lo..j {
                    s -= self.data[si + k - fi] * self.data[sj + k - fj];
                }
                if j < i {
                    s /= self.data[sj + j - fj];
                    self.data[si + j - fi] = s;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i });
                    }
                    self.data[si + i - fi] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { factor: self })
    }
}

#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    factor: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let l = &self.factor;
        let n = l.dim();
        let mut y = rhs.clone();
        for i in 0..n {
            let fi = l.first[i];
            let si = l.start[i];
            let mut s = y[i];
            for k in fi..i {
                s -= l.data[si + k - fi] * y[k];
            }
            y[i] = s / l.data[si + i - fi];
        }
        // L^T x = y, column-oriented sweep over the rows of L.
        for i in (0..n).rev() {
            let fi = l.first[i];
            let si = l.start[i];
            y[i] /= l.data[si + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= l.data[si + k - fi] * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn banded_spd(n: usize, band: usize) -> (SkylineMatrix, DMatrix<f64>) {
        let first: Vec<usize> = (0..n).map(|i| i.saturating_sub(band)).collect();
        let mut sky = SkylineMatrix::with_envelope(first);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(band)..=i {
                let v = if i == j { 10.0 + i as f64 } else { 1.0 / (1.0 + (i + 2 * j) as f64) };
                sky.add_lower(i, j, v);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        (sky, dense)
    }

    #[test]
    fn matches_dense_solve() {
        let (sky, dense) = banded_spd(40, 5);
        assert_eq!(sky.to_dense(), dense);
        let rhs = DVector::from_fn(40, |i, _| (i as f64).sin());
        let x = sky.cholesky().unwrap().solve(&rhs);
        let expected = dense.cholesky().unwrap().solve(&rhs);
        assert!((x - expected).norm() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        let mut sky = SkylineMatrix::with_envelope(vec![0, 0]);
        sky.add_lower(0, 0, 1.0);
        sky.add_lower(1, 0, 2.0);
        sky.add_lower(1, 1, 1.0);
        assert!(matches!(sky.cholesky(), Err(Error::NotPositiveDefinite { pivot: 1 })));
    }

    #[test]
    fn ragged_envelope() {
        let first = vec![0, 0, 2, 1, 3];
        let mut sky = SkylineMatrix::with_envelope(first.clone());
        for (i, &f) in first.iter().enumerate() {
            for j in f..=i {
                sky.add_lower(i, j, if i == j { 4.0 } else { 0.5 });
            }
        }
        let dense = sky.to_dense();
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 1.0]);
        let x = sky.cholesky().unwrap().solve(&rhs);
        assert!((dense * x - rhs).norm() < 1e-12);
    }
}
