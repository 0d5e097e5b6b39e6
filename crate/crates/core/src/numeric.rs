//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pairwise (cascade) summation. Result depends only on element order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample variance with the n - 1 denominator; `None` below two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    Some(pairwise_sum(&sq) / (xs.len() - 1) as f64)
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Column sums of row vectors, each of length `dim`.
pub fn column_sums(rows: &[DVector<f64>], dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    let mut col = vec![0.0; rows.len()];
    for k in 0..dim {
        for (c, r) in col.iter_mut().zip(rows) {
            *c = r[k];
        }
        out[k] = pairwise_sum(&col);
    }
    out
}

/// Largest condition number accepted by [`spd_inverse`].
pub const MAX_CONDITION: f64 = 1e12;

/// Inverse of a symmetric positive-definite matrix via Cholesky, refusing
/// matrices whose eigenvalue ratio exceeds [`MAX_CONDITION`].
pub fn spd_inverse(m: &DMatrix<f64>, block: &str) -> Result<DMatrix<f64>> {
    let condition = spd_condition(m);
    if !(condition.is_finite() && condition <= MAX_CONDITION) {
        return Err(Error::SingularInformation {
            block: block.to_string(),
            condition,
        });
    }
    let chol = m.clone().cholesky().ok_or(Error::SingularInformation {
        block: block.to_string(),
        condition,
    })?;
    let inv = chol.inverse();
    Ok(symmetrize(&inv))
}

/// Eigenvalue ratio of a symmetric matrix; infinite when it is not positive definite.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `(m + mᵀ) / 2`, exactly symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), 249_750.0);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
    }

    #[test]
    fn spd_inverse_guards_conditioning() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = spd_inverse(&m, "test").unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_inverse(&singular, "test"),
            Err(Error::SingularInformation { .. })
        ));
    }
}
