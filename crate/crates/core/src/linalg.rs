//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Matrix exponential `exp(t * m)`.
pub fn expm(m: &Mat, t: f64) -> Mat {
    if m.nrows() == 0 {
        return m.clone();
    }
    if t == 0.0 {
        return Mat::identity(m.nrows(), m.ncols());
    }
    (m * t).exp()
}

/// 2-norm condition number. Infinite for singular or empty-rank matrices.
pub fn condition_number(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn condition_number_c(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b`; reports the condition number when `a` is singular.
pub fn solve(a: &Mat, b: &Mat, what: &str) -> Result<Mat> {
    if a.nrows() == 0 {
        return Ok(Mat::zeros(0, b.ncols()));
    }
    let lu = a.clone().lu();
    match lu.solve(b) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(Error::Singular { what: what.to_string(), condition: condition_number(a) }),
    }
}

pub fn solve_vec(a: &Mat, b: &Vector, what: &str) -> Result<Vector> {
    let x = solve(a, &Mat::from_column_slice(b.len(), 1, b.as_slice()), what)?;
    Ok(x.column(0).into_owned())
}

pub fn inverse(a: &Mat, what: &str) -> Result<Mat> {
    solve(a, &Mat::identity(a.nrows(), a.nrows()), what)
}

/// Right division `x = b a^{-1}` for complex matrices.
pub fn right_divide_c(b: &CMat, a: &CMat, what: &str) -> Result<CMat> {
    let at = a.transpose();
    let bt = b.transpose();
    match at.lu().solve(&bt) {
        Some(x) if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) => Ok(x.transpose()),
        _ => Err(Error::Singular { what: what.to_string(), condition: condition_number_c(a) }),
    }
}

/// Right division `x = b a^{-1}`.
pub fn right_divide(b: &Mat, a: &Mat, what: &str) -> Result<Mat> {
    Ok(solve(&a.transpose(), &b.transpose(), what)?.transpose())
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Submatrix on the given row and column index lists.
pub fn select(m: &Mat, rows: &[usize], cols: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_c(m: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Parlett-Reinsch balancing by powers of two. Returns the balanced matrix;
/// eigenvalues are unchanged.
pub fn balance(m: &Mat) -> Mat {
    let n = m.nrows();
    let mut a = m.clone();
    let radix = 2.0_f64;
    let mut done = false;
    let mut sweeps = 0;
    while !done && sweeps < 100 {
        done = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let rr = r / radix;
            while cc < rr {
                f *= radix;
                cc *= radix * radix;
            }
            let rr = r * radix;
            while cc > rr {
                f /= radix;
                cc /= radix * radix;
            }
            if (cc + r) / f < 0.95 * s {
                done = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
    a
}

/// Eigenvalues of a real matrix, computed after balancing.
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(vec![]);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite entries in eigenvalue problem"));
    }
    let b = balance(m);
    let schur = nalgebra::Schur::try_new(b, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::numerical("Schur iteration did not converge"))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Unit right null vector (smallest right singular vector) and the smallest
/// singular value relative to the largest.
pub fn null_vector_c(m: &CMat) -> (CVector, f64) {
    let svd = SVD::new(m.clone(), false, true);
    let vt = svd.v_t.expect("requested V^T");
    let n = m.ncols();
    let v = vt.row(n - 1).adjoint();
    let smax = svd.singular_values[0].max(f64::MIN_POSITIVE);
    (v, svd.singular_values[n - 1] / smax)
}

pub fn null_vector(m: &Mat) -> (Vector, f64) {
    let svd = SVD::new(m.clone(), false, true);
    let vt = svd.v_t.expect("requested V^T");
    let n = m.ncols();
    let v = vt.row(n - 1).transpose();
    let smax = svd.singular_values[0].max(f64::MIN_POSITIVE);
    (v, svd.singular_values[n - 1] / smax)
}

/// Stationary distribution of an irreducible conservative generator.
pub fn stationary_distribution(q: &Mat) -> Result<Vector> {
    let n = q.nrows();
    // Replace one balance equation by normalization.
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = Vector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = solve_vec(&a, &rhs, "stationary distribution")?;
    Ok(pi)
}

/// Pairwise summation, for order-independent reductions of long sample vectors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balancing_preserves_spectrum() {
        let m = Mat::from_row_slice(3, 3, &[1.0, 1e6, 0.0, 1e-6, 2.0, 1e4, 0.0, 1e-4, 3.0]);
        let mut ev: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut direct: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        direct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn stationary_of_two_state_chain() {
        let q = Mat::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        let pi = stationary_distribution(&q).unwrap();
        assert!((pi[0] - 0.75).abs() < 1e-14);
        assert!((pi[1] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn null_vector_of_rank_deficient() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let (v, rel) = null_vector(&m);
        assert!(rel < 1e-15);
        assert!((&m * v).norm() < 1e-14);
    }

    #[test]
    fn expm_of_diagonal() {
        let m = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, 2.0]));
        let e = expm(&m, 0.5);
        assert!((e[(0, 0)] - (-0.5f64).exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - 1f64.exp()).abs() < 1e-13);
    }
}
