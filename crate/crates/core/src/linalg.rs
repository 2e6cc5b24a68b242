//! Small dense linear-algebra helpers: numeric rank, rank-revealing row
//! selection, and principal angles between row-orthonormal matrices.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Default relative threshold below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

pub(crate) fn check_finite_matrix(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn check_finite_vector(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Number of singular values above `tol * sigma_max`.
///
/// A matrix with no rows, no columns, or all-zero entries has rank 0.
/// Invariant under row scaling by nonzero constants and row permutation.
pub fn numeric_rank(matrix: &DMatrix<f64>, tol: f64) -> Result<usize> {
    check_finite_matrix(matrix, "numeric_rank matrix")?;
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::input(format!(
            "rank tolerance must lie in (0,1), got {tol}"
        )));
    }
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Ok(0);
    }
    let sv = matrix.clone().svd(false, false).singular_values;
    let sigma_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * sigma_max).count())
}

/// Rank-revealing selection of independent rows by pivoted Gram-Schmidt.
///
/// Returns `(independent, dependent)` index lists. A row joins the dependent
/// set when its residual against the chosen rows falls below
/// `tol * max_row_norm`. Exactly-zero rows are always dependent.
pub fn select_independent_rows(rows: &DMatrix<f64>, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let m = rows.nrows();
    if m == 0 {
        return (vec![], vec![]);
    }
    let mut residuals: Vec<DVector<f64>> = (0..m).map(|i| rows.row(i).transpose()).collect();
    let max_norm = residuals.iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
    if max_norm == 0.0 {
        return (vec![], (0..m).collect());
    }
    let threshold = tol * max_norm;
    let mut chosen: Vec<usize> = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut remaining: Vec<usize> = (0..m).collect();
    while let Some((pos, &idx)) = remaining.iter().enumerate().max_by(|a, b| {
        residuals[*a.1]
            .norm()
            .partial_cmp(&residuals[*b.1].norm())
            .unwrap()
    }) {
        // `idx` is the remaining row with the largest residual norm
        let norm = residuals[idx].norm();
        if norm <= threshold {
            break;
        }
        let e = &residuals[idx] / norm;
        remaining.swap_remove(pos);
        chosen.push(idx);
        // deflate, with one reorthogonalization pass for stability
        for &j in &remaining {
            let r = residuals[j].clone();
            let r = &r - &e * e.dot(&r);
            residuals[j] = &r - &e * e.dot(&r);
        }
        basis.push(e);
        if remaining.is_empty() {
            break;
        }
    }
    chosen.sort_unstable();
    let mut dependent: Vec<usize> = (0..m).filter(|i| !chosen.contains(i)).collect();
    dependent.sort_unstable();
    (chosen, dependent)
}

/// Principal angles (radians, ascending) between the row spans of two
/// matrices with Euclidean-orthonormal rows. Returns `min(ra, rb)` angles.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let k = a.nrows().min(b.nrows());
    if k == 0 {
        return vec![];
    }
    let product = a * b.transpose();
    let sv = product.svd(false, false).singular_values;
    let mut cosines: Vec<f64> = sv.iter().cloned().collect();
    cosines.sort_by(|x, y| y.partial_cmp(x).unwrap());
    cosines
        .into_iter()
        .take(k)
        .map(|c| c.clamp(-1.0, 1.0).acos())
        .collect()
}

/// Largest principal angle between equal-rank row-orthonormal spans;
/// `None` when the ranks differ (the spans cannot coincide).
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    if a.nrows() != b.nrows() {
        return None;
    }
    if a.nrows() == 0 {
        return Some(0.0);
    }
    principal_angles(a, b)
        .into_iter()
        .fold(None, |acc, x| Some(acc.map_or(x, |m: f64| m.max(x))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rank_of_single_row() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert_eq!(numeric_rank(&m, 1e-9).unwrap(), 1);
    }

    #[test]
    fn rank_of_zero_row() {
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        assert_eq!(numeric_rank(&m, 1e-9).unwrap(), 0);
    }

    #[test]
    fn rank_of_dependent_rows() {
        // third row is the sum of the first two
        let m = DMatrix::from_row_slice(
            3,
            5,
            &[
                1.0, 0.0, 0.0, 0.0, -1.0, //
                0.0, 1.0, 1.0, 0.0, 0.0, //
                1.0, 1.0, 1.0, 0.0, -1.0,
            ],
        );
        assert_eq!(numeric_rank(&m, 1e-9).unwrap(), 2);
    }

    #[test]
    fn rank_of_empty_matrix() {
        let m = DMatrix::<f64>::zeros(0, 4);
        assert_eq!(numeric_rank(&m, 1e-9).unwrap(), 0);
    }

    #[test]
    fn rank_rejects_bad_tolerance() {
        let m = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(numeric_rank(&m, 0.0).is_err());
        assert!(numeric_rank(&m, 1.5).is_err());
    }

    #[test]
    fn rank_rejects_non_finite() {
        let m = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        assert!(matches!(numeric_rank(&m, 1e-9), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rank_invariant_under_row_scaling_and_permutation() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, 1.0, 1.0]);
        let scaled = DMatrix::from_row_slice(2, 3, &[0.0, -4.0, -4.0, 1e3, 2e3, 3e3]);
        assert_eq!(
            numeric_rank(&m, 1e-9).unwrap(),
            numeric_rank(&scaled, 1e-9).unwrap()
        );
    }

    #[test]
    fn independent_row_selection_reports_dependents() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0, 0.0, 0.0, //
                2.0, 0.0, 0.0, //
                0.0, 1.0, 0.0,
            ],
        );
        let (indep, dep) = select_independent_rows(&m, 1e-9);
        assert_eq!(indep.len(), 2);
        assert_eq!(dep.len(), 1);
        // either of rows 0/1 may be chosen, row 2 is always independent
        assert!(indep.contains(&2));
    }

    #[test]
    fn principal_angle_orthogonal_lines() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let angles = principal_angles(&a, &b);
        assert_abs_diff_eq!(angles[0], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn max_angle_of_empty_spans_is_zero() {
        let a = DMatrix::<f64>::zeros(0, 3);
        assert_eq!(max_principal_angle(&a, &a), Some(0.0));
    }
}
