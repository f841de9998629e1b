//! Dense symmetric positive-definite solves, row-major `n × n`.

use crate::scalar::Scalar;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub(crate) struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

/// Index of the first pivot that is not sufficiently positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NotPositiveDefinite(pub usize);

impl<T: Scalar> Cholesky<T> {
    /// Fails when a pivot falls below `rel_tol` times the largest diagonal entry.
    pub(crate) fn factor(a: &[T], n: usize, rel_tol: T) -> Result<Self, NotPositiveDefinite> {
        debug_assert_eq!(a.len(), n * n);
        let scale = (0..n)
            .map(|i| a[i * n + i].abs())
            .fold(T::zero(), T::max)
            .max(T::min_positive_value());
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d = d - l[j * n + k] * l[j * n + k];
            }
            if !(d > rel_tol * scale) {
                return Err(NotPositiveDefinite(j));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    #[allow(clippy::needless_range_loop)]
    pub(crate) fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Diagonal of the inverse matrix.
    pub(crate) fn inverse_diagonal(&self) -> Vec<T> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut e = vec![T::zero(); n];
                e[i] = T::one();
                self.solve(&e)[i]
            })
            .collect()
    }
}
