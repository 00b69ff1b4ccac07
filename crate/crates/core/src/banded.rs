//! Banded matrices and LU factorization with partial pivoting.
//!
//! Row `i` stores the columns `i - kl ..= i + ku + kl`; the extra `kl` superdiagonals hold
//! the fill-in produced by row interchanges.  Both `A x = b` and `A^T x = b` can be solved
//! from one factorization.

use crate::error::{ObgError, Result};
use crate::scalar::{lit, Real};

#[derive(Clone, Debug)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> BandMatrix<T> {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![T::zero(); n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.kl < i || j > i + self.ku + self.kl {
            return None;
        }
        Some(i * self.width + (j + self.kl - i))
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |k| self.data[k])
    }

    /// Adds `v` to entry `(i, j)`; panics if the entry lies outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.slot(i, j).expect("index in range");
        self.data[k] = self.data[k] + v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let old = self.get(i, j);
        self.add(i, j, v - old);
    }

    fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + self.kl + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| self.row_range(i).fold(T::zero(), |acc, j| acc + self.get(i, j) * x[j]))
            .collect()
    }

    pub fn transpose_matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            for j in self.row_range(i) {
                y[j] = y[j] + self.get(i, j) * x[i];
            }
        }
        y
    }

    /// Factors `P A = L U`; fails with `Singular` when a pivot is negligible relative to
    /// the largest entry.
    pub fn lu(mut self) -> Result<BandLu<T>> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if scale == T::zero() {
            return Err(ObgError::Singular("zero matrix".into()));
        }
        let tiny = scale * T::epsilon() * lit(n.max(1) as f64);
        let mut piv = vec![0usize; n];
        let mut lmul = vec![T::zero(); n * kl.max(1)];
        let mut min_pivot = T::infinity();
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let p = (k..=last)
                .max_by(|&a, &b| self.get(a, k).abs().partial_cmp(&self.get(b, k).abs()).unwrap())
                .unwrap();
            piv[k] = p;
            let hi = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=hi {
                    let (a, b) = (self.slot(k, j).unwrap(), self.slot(p, j).unwrap());
                    self.data.swap(a, b);
                }
            }
            let d = self.get(k, k);
            min_pivot = min_pivot.min(d.abs());
            if d.abs() <= tiny {
                return Err(ObgError::Singular(format!("pivot {:.3e} at row {k}", d.to_f64().unwrap_or(0.0))));
            }
            for i in k + 1..=last {
                let l = self.get(i, k) / d;
                lmul[k * kl + (i - k - 1)] = l;
                let s = self.slot(i, k).unwrap();
                self.data[s] = T::zero();
                if l != T::zero() {
                    for j in k + 1..=hi {
                        let (si, sk) = (self.slot(i, j).unwrap(), self.slot(k, j).unwrap());
                        self.data[si] = self.data[si] - l * self.data[sk];
                    }
                }
            }
        }
        Ok(BandLu { u: self, lmul, piv, min_pivot, scale })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu<T> {
    u: BandMatrix<T>,
    lmul: Vec<T>,
    piv: Vec<usize>,
    min_pivot: T,
    scale: T,
}

impl<T: Real> BandLu<T> {
    /// Smallest pivot relative to the largest matrix entry (a cheap conditioning hint).
    pub fn pivot_ratio(&self) -> T {
        self.min_pivot / self.scale
    }

    fn l(&self, k: usize, i: usize) -> T {
        self.lmul[k * self.u.kl + (i - k - 1)]
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [T]) {
        let (n, kl, ku) = (self.u.n, self.u.kl, self.u.ku);
        for k in 0..n {
            b.swap(k, self.piv[k]);
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] = b[i] - self.l(k, i) * b[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + ku + kl).min(n - 1) {
                s = s - self.u.get(k, j) * b[j];
            }
            b[k] = s / self.u.get(k, k);
        }
    }

    /// Solves `A^T x = b` in place.
    pub fn solve_transpose(&self, b: &mut [T]) {
        let (n, kl, ku) = (self.u.n, self.u.kl, self.u.ku);
        for k in 0..n {
            let mut s = b[k];
            for i in k.saturating_sub(ku + kl)..k {
                s = s - self.u.get(i, k) * b[i];
            }
            b[k] = s / self.u.get(k, k);
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                s = s - self.l(k, i) * b[i];
            }
            b[k] = s;
            b.swap(k, self.piv[k]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn build(n: usize, kl: usize, ku: usize, vals: &[f64]) -> (BandMatrix<f64>, DMatrix<f64>) {
        let mut b = BandMatrix::new(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        let mut it = vals.iter().cycle();
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let v = *it.next().unwrap();
                b.set(i, j, v);
                d[(i, j)] = v;
            }
        }
        (b, d)
    }

    proptest! {
        #[test]
        fn matches_dense_solve(
            n in 3usize..40, kl in 0usize..4, ku in 0usize..4,
            vals in prop::collection::vec(-1.0f64..1.0, 64),
            rhs in prop::collection::vec(-1.0f64..1.0, 40),
        ) {
            let (b, d) = build(n, kl, ku, &vals);
            let x_true = DVector::from_iterator(n, rhs.iter().copied().take(n));
            let ax = &d * &x_true;
            let atx = d.transpose() * &x_true;
            if let Ok(lu) = b.clone().lu() {
                prop_assume!(lu.pivot_ratio() > 1e-6);
                let cond = d.clone().svd(false, false).singular_values;
                prop_assume!(cond.max() / cond.min() < 1e6);
                let mut y: Vec<f64> = ax.iter().copied().collect();
                lu.solve(&mut y);
                let mut z: Vec<f64> = atx.iter().copied().collect();
                lu.solve_transpose(&mut z);
                for i in 0..n {
                    prop_assert!((y[i] - x_true[i]).abs() < 1e-6);
                    prop_assert!((z[i] - x_true[i]).abs() < 1e-6);
                }
                let back = b.matvec(&y);
                for i in 0..n {
                    prop_assert!((back[i] - ax[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pivoting_is_needed_and_done() {
        let mut b = BandMatrix::<f64>::new(3, 1, 1);
        b.set(0, 0, 0.0);
        b.set(0, 1, 1.0);
        b.set(1, 0, 1.0);
        b.set(1, 1, 0.0);
        b.set(1, 2, 2.0);
        b.set(2, 1, 3.0);
        b.set(2, 2, 1.0);
        let lu = b.clone().lu().unwrap();
        let mut x: Vec<f64> = vec![1.0, 2.0, 3.0];
        lu.solve(&mut x);
        let r = b.matvec(&x);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14 && (r[2] - 3.0).abs() < 1e-14);
        let mut y: Vec<f64> = vec![1.0, 2.0, 3.0];
        lu.solve_transpose(&mut y);
        let r = b.transpose_matvec(&y);
        assert!((r[0] - 1.0).abs() < 1e-14 && (r[1] - 2.0).abs() < 1e-14 && (r[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let mut b = BandMatrix::<f64>::new(2, 1, 1);
        b.set(0, 0, 1.0);
        b.set(0, 1, 2.0);
        b.set(1, 0, 2.0);
        b.set(1, 1, 4.0);
        assert!(matches!(b.lu(), Err(ObgError::Singular(_))));
    }
}
