//! Shared test oracles, independent of the library's computation paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Row-echelon rank by Gaussian elimination with partial pivoting.
pub fn gaussian_rank(matrix: &DMatrix<f64>, tol: f64) -> usize {
    let mut m = matrix.clone();
    let (rows, cols) = m.shape();
    let scale = m.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    let mut col = 0;
    while rank < rows && col < cols {
        let (pivot_row, pivot_val) = (rank..rows)
            .map(|r| (r, m[(r, col)].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if pivot_val <= tol * scale {
            col += 1;
            continue;
        }
        m.swap_rows(rank, pivot_row);
        for r in (rank + 1)..rows {
            let factor = m[(r, col)] / m[(rank, col)];
            for c in col..cols {
                m[(r, c)] -= factor * m[(rank, c)];
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

/// Minimal-kinetic-energy momentum satisfying `omega g^{-1} p = 0`,
/// computed by parametrizing the constraint null space through the
/// spectral decomposition of `M^T M` (`M = omega g^{-1}`) and solving the
/// reduced least-squares problem. Entirely independent of the projector
/// formula.
pub fn nullspace_lsq_oracle(
    g: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    p_minus: &DVector<f64>,
) -> DVector<f64> {
    let n = g.nrows();
    let g_inv = g.clone().try_inverse().expect("SPD metric");
    let m = omega * &g_inv;
    let mtm = m.transpose() * &m;
    let eig = mtm.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut null_cols: Vec<usize> = Vec::new();
    for i in 0..n {
        if lambda_max == 0.0 || eig.eigenvalues[i] <= 1e-12 * lambda_max {
            null_cols.push(i);
        }
    }
    let k = null_cols.len();
    let mut basis = DMatrix::zeros(n, k);
    for (j, &i) in null_cols.iter().enumerate() {
        basis.column_mut(j).copy_from(&eig.eigenvectors.column(i));
    }
    if k == 0 {
        return DVector::zeros(n);
    }
    // minimize (N z - p)^T g^{-1} (N z - p)
    let a = basis.transpose() * &g_inv * &basis;
    let b = basis.transpose() * &g_inv * p_minus;
    let z = a.lu().solve(&b).expect("reduced system is SPD");
    basis * z
}

/// Closed-form Lagrange multiplier of the curved-constraint central-force
/// system, written straight from its scalar expression.
pub fn central_force_multiplier(q: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let (x, y, z) = (q[0], q[1], q[2]);
    let (xd, yd, zd) = (v[0], v[1], v[2]);
    let numerator = -2.0 * x * xd * xd + y * yd * xd - 2.0 * y * yd * yd - x * yd * yd
        + yd * zd
        + x * x * x
        + y * y * y
        - y * z
        + x;
    let w1 = y * y - x * x - z;
    let w2 = z - y * y - x * y;
    let denominator = w1 * w1 + w2 * w2 + x * x;
    numerator / denominator
}

/// Standard normal sample via Box-Muller.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn gaussian_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| gaussian(rng)))
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| gaussian(rng)))
}

/// Well-conditioned random symmetric positive-definite matrix.
pub fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, n);
    a.transpose() * a + DMatrix::identity(n, n) * 0.5
}

/// Random constraint rows with full row rank (resampled if nearly
/// dependent).
pub fn random_independent_rows(rng: &mut impl Rng, m: usize, n: usize) -> DMatrix<f64> {
    loop {
        let rows = gaussian_matrix(rng, m, n);
        let sv = rows.clone().svd(false, false).singular_values;
        let max = sv.iter().cloned().fold(0.0_f64, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min > 1e-3 * max {
            return rows;
        }
    }
}
