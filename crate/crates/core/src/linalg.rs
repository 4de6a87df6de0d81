//! Small dense helpers on top of nalgebra for symmetric matrices.

use crate::error::{check_len, Error, Result};
use crate::{DMat, DVec};
use nalgebra::SymmetricEigen;

/// Smallest eigenvalue a fluctuation matrix may have before it is rejected.
pub const PD_FLOOR: f64 = 1e-12;

/// Eigen-decomposition with eigenvalues sorted ascending; columns of the
/// returned matrix are the matching eigenvectors.
pub fn sym_eigen(m: &DMat) -> (DVec, DMat) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVec::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMat::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Apply a scalar function to the spectrum of a symmetric matrix.
pub fn sym_apply(m: &DMat, f: impl Fn(f64) -> f64) -> DMat {
    let (values, vectors) = sym_eigen(m);
    let scaled = DMat::from_fn(m.nrows(), m.ncols(), |i, k| vectors[(i, k)] * f(values[k]));
    &scaled * vectors.transpose()
}

pub fn max_asymmetry(m: &DMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMat) -> DMat {
    (m + m.transpose()) * 0.5
}

/// Square, symmetric (to 1e-10 relative to the largest entry) and with every
/// eigenvalue at or above [`PD_FLOOR`].
pub fn check_spd(what: &'static str, m: &DMat, dim: usize) -> Result<()> {
    check_len(what, dim, m.nrows())?;
    check_len(what, dim, m.ncols())?;
    let scale = m.amax().max(1.0);
    let deviation = max_asymmetry(m);
    if deviation > 1e-10 * scale {
        return Err(Error::NotSymmetric { what, deviation });
    }
    let min_eigenvalue = min_eigenvalue(m);
    if !(min_eigenvalue >= PD_FLOOR) {
        return Err(Error::NotPositiveDefinite { what, min_eigenvalue });
    }
    Ok(())
}

/// Vector accumulator with a running error term per component (TwoSum), so
/// sums with heavy cancellation keep full precision.
pub struct CompensatedVec {
    sum: DVec,
    err: DVec,
}

impl CompensatedVec {
    pub fn zeros(n: usize) -> Self {
        Self {
            sum: DVec::zeros(n),
            err: DVec::zeros(n),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, x: f64) {
        let s = self.sum[i];
        let t = s + x;
        let bp = t - s;
        self.err[i] += (s - (t - bp)) + (x - bp);
        self.sum[i] = t;
    }

    pub fn finish(self) -> DVec {
        self.sum + self.err
    }
}
