//! Small dense linear algebra: Householder QR, minimum-norm solves and null vectors.
//!
//! Matrices here are tiny (at most `k + 2` columns of length `k + 1`, or `d`
//! rows of length `k`), so everything works on plain `Vec`s.

use crate::Scalar;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Householder QR of an `m x n` matrix given by its `n` columns, `n <= m`.
#[derive(Debug, Clone)]
pub struct HouseholderQr<T> {
    rows: usize,
    /// `(v, beta)` for each reflector `I - beta v v^T` acting on entries `j..m`.
    reflectors: Vec<(Vec<T>, T)>,
    /// Upper triangle, `r[j][i]` for `i >= j` (row-major, `n x n`).
    r: Vec<Vec<T>>,
}

impl<T: Scalar> HouseholderQr<T> {
    pub fn new(mut columns: Vec<Vec<T>>) -> Self {
        let n = columns.len();
        let m = columns.first().map_or(0, Vec::len);
        assert!(n <= m, "QR needs at least as many rows as columns");
        assert!(columns.iter().all(|c| c.len() == m), "ragged matrix");

        let mut reflectors = Vec::with_capacity(n);
        let mut r = vec![vec![T::zero(); n]; n];
        for j in 0..n {
            let x = &columns[j][j..];
            let norm = norm2(x);
            let alpha = if x[0] > T::zero() { -norm } else { norm };
            let mut v = x.to_vec();
            v[0] = v[0] - alpha;
            let vtv = dot(&v, &v);
            let beta = if vtv > T::zero() { T::lit(2.0) / vtv } else { T::zero() };
            for col in columns.iter_mut().skip(j) {
                let s = beta * dot(&v, &col[j..]);
                axpy(-s, &v, &mut col[j..]);
            }
            for (i, col) in columns.iter().enumerate().skip(j) {
                r[j][i] = col[j];
            }
            // The reflected pivot column is exactly (alpha, 0, ..., 0).
            r[j][j] = if beta > T::zero() { alpha } else { columns[j][j] };
            reflectors.push((v, beta));
        }
        Self { rows: m, reflectors, r }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.reflectors.len()
    }

    pub fn r_diag(&self, j: usize) -> T {
        self.r[j][j]
    }

    /// Computes `Q y` for a full-length vector `y`.
    pub fn apply_q(&self, y: &mut [T]) {
        assert_eq!(y.len(), self.rows);
        for (j, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            let s = *beta * dot(v, &y[j..]);
            axpy(-s, v, &mut y[j..]);
        }
    }
}

/// Failure of [`min_norm_solve`]: row `row` is (numerically) in the span of the rows above it.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("matrix is rank deficient at row {row} (|r_jj| = {pivot:e})")]
pub struct RankDeficient {
    pub row: usize,
    pub pivot: f64,
}

/// Minimum Euclidean norm solution of `A x = b` for a full row rank `d x k` matrix
/// given by its rows (`d <= k`).
///
/// Factors `A^T = Q R`, solves `R^T y = b` by forward substitution and returns
/// `x = Q [y; 0]`, which lies in the row space of `A`.
pub fn min_norm_solve<T: Scalar>(rows: &[Vec<T>], rhs: &[T], rank_tol: T) -> Result<Vec<T>, RankDeficient> {
    assert_eq!(rows.len(), rhs.len());
    let d = rows.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    let k = rows[0].len();
    assert!(d <= k, "more rows than unknowns");
    let qr = HouseholderQr::new(rows.to_vec());
    for j in 0..d {
        let pivot = qr.r_diag(j);
        if pivot.abs() <= rank_tol {
            return Err(RankDeficient { row: j, pivot: pivot.to_f64_lossy() });
        }
    }
    let mut y = vec![T::zero(); k];
    for i in 0..d {
        let mut acc = rhs[i];
        for (j, &yj) in y.iter().enumerate().take(i) {
            acc = acc - qr.r[j][i] * yj;
        }
        y[i] = acc / qr.r[i][i];
    }
    qr.apply_q(&mut y);
    Ok(y)
}

/// A unit vector in the null space of the `m x n` matrix with the given columns,
/// where `n > m`.
///
/// Uses the last column of the full `Q` from the QR factorization of the
/// transpose: it is orthogonal to every row of the matrix.
pub fn null_vector<T: Scalar>(columns: &[Vec<T>]) -> Vec<T> {
    let n = columns.len();
    let m = columns.first().map_or(0, Vec::len);
    assert!(n > m, "null_vector needs more columns than rows");
    // Rows of the matrix become the columns of its transpose.
    let transposed: Vec<Vec<T>> = (0..m).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let qr = HouseholderQr::new(transposed);
    let mut e = vec![T::zero(); n];
    e[n - 1] = T::one();
    qr.apply_q(&mut e);
    e
}
