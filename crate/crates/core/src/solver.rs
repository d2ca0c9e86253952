//! Recovering the preference direction from the basis and its ratios.

use serde::{Deserialize, Serialize};

use crate::basis::{DirectionalBasis, RatioEstimates};
use crate::feedback::{Oracle, OracleError, Phase, Responder, Verdict};
use crate::linalg::{min_norm_solve, norm_inf, RankDeficient};
use crate::momdp::{MixturePolicy, Policy};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    #[default]
    Full,
    Truncated,
}

/// Row 1 is the benchmark value; row `i` is `ratio_{i-1} * V_1 - V_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMatrix<T> {
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> RatioMatrix<T> {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn residual(&self, weights: &[T]) -> T {
        let r: Vec<T> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let target = if i == 0 { T::one() } else { T::zero() };
                crate::linalg::dot(row, weights) - target
            })
            .collect();
        norm_inf(&r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate<T> {
    pub weights: Vec<T>,
    pub mode: SolveMode,
    /// Truncation threshold, truncated mode only.
    pub delta: Option<T>,
    /// Number of rows kept in the solve.
    pub d_delta: usize,
    /// `max_i |(A w - e1)_i|` over the kept rows.
    pub residual: T,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("expected {expected} ratios for a basis of size {basis}, got {found}")]
    RatioCount { basis: usize, expected: usize, found: usize },
    #[error("basis value {row} has dimension {found}, expected {expected}")]
    Dimension { row: usize, expected: usize, found: usize },
    #[error("ratio matrix is rank deficient at row {}", .0.row)]
    RankDeficient(#[from] RankDeficient),
    #[error("truncation threshold must be positive")]
    BadDelta,
}

pub fn assemble_ratio_matrix<T: Scalar>(
    basis: &DirectionalBasis<T>,
    ratios: &RatioEstimates<T>,
) -> Result<RatioMatrix<T>, SolverError> {
    let d = basis.dim();
    if ratios.ratios.len() + 1 != d {
        return Err(SolverError::RatioCount { basis: d, expected: d.saturating_sub(1), found: ratios.ratios.len() });
    }
    let v1 = &basis.entries[0].value;
    let k = v1.len();
    let mut rows = vec![v1.0.clone()];
    for (i, (entry, &alpha)) in basis.entries.iter().skip(1).zip(&ratios.ratios).enumerate() {
        if entry.value.len() != k {
            return Err(SolverError::Dimension { row: i + 1, expected: k, found: entry.value.len() });
        }
        rows.push(v1.iter().zip(entry.value.iter()).map(|(&a, &b)| alpha * a - b).collect());
    }
    Ok(RatioMatrix { rows })
}

fn solve_rows<T: Scalar>(rows: &[Vec<T>], rank_tol: T) -> Result<(Vec<T>, T), SolverError> {
    let mut rhs = vec![T::zero(); rows.len()];
    rhs[0] = T::one();
    let weights = min_norm_solve(rows, &rhs, rank_tol)?;
    let residual = RatioMatrix { rows: rows.to_vec() }.residual(&weights);
    Ok((weights, residual))
}

/// Minimum-norm solution of `A x = e1` over every row.
pub fn solve_full<T: Scalar>(matrix: &RatioMatrix<T>, rank_tol: T) -> Result<WeightEstimate<T>, SolverError> {
    let (weights, residual) = solve_rows(&matrix.rows, rank_tol)?;
    Ok(WeightEstimate { weights, mode: SolveMode::Full, delta: None, d_delta: matrix.dim(), residual })
}

/// Number of rows kept at threshold `delta`: one less than the first
/// (1-based) index `i >= 2` whose magnitude is at most `delta`.
pub fn truncation_dim<T: Scalar>(magnitudes: &[T], delta: T) -> usize {
    magnitudes.iter().skip(1).position(|&m| m <= delta).map_or(magnitudes.len(), |p| p + 1)
}

/// Minimum-norm solution over the rows kept by [`truncation_dim`].
pub fn truncate_and_solve<T: Scalar>(
    matrix: &RatioMatrix<T>,
    basis: &DirectionalBasis<T>,
    delta: T,
    rank_tol: T,
) -> Result<WeightEstimate<T>, SolverError> {
    if !(delta > T::zero()) {
        return Err(SolverError::BadDelta);
    }
    let d_delta = truncation_dim(&basis.magnitudes(), delta);
    let (weights, residual) = solve_rows(&matrix.rows[..d_delta], rank_tol)?;
    Ok(WeightEstimate { weights, mode: SolveMode::Truncated, delta: Some(delta), d_delta, residual })
}

/// `k^(5/3) * eta^(1/3)`.
pub fn truncation_threshold<T: Scalar>(k: usize, eta: T) -> T {
    T::lit(k as f64).powf(T::lit(5.0 / 3.0)) * eta.cbrt()
}

/// Bisection settings for the precision estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionSearch<T> {
    pub eta_min: T,
    /// Stop once the bracket is within this fraction of its upper end.
    pub rel_tol: T,
}

impl<T: Scalar> PrecisionSearch<T> {
    /// `1 + ceil(log2(1 / eta_min))`.
    pub fn max_iterations(&self) -> usize {
        1 + (T::one() / self.eta_min).to_f64_lossy().log2().ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionEstimate<T> {
    /// Precision in units of the benchmark's personalized value.
    pub eta: T,
    pub iterations: usize,
    /// The benchmark could not be told apart from doing nothing.
    pub saturated: bool,
    /// The search reached `eta_min` without finding the boundary.
    pub floor: bool,
}

/// Finds the smallest shrink factor `eta` at which the benchmark becomes
/// distinguishable from `(1 - eta) * benchmark + eta * do_nothing`.
///
/// Returns the upper end of the final bracket.
pub fn estimate_precision<T: Scalar, R: Responder<T>>(
    oracle: &mut Oracle<'_, T, R>,
    benchmark: &Policy,
    search: &PrecisionSearch<T>,
) -> Result<PrecisionEstimate<T>, OracleError> {
    let max_iterations = search.max_iterations();
    let shrink = |oracle: &mut Oracle<'_, T, R>, eta: T| {
        let mdp = oracle.mdp();
        oracle.compare(
            Phase::Precision,
            MixturePolicy::pure(benchmark.clone()),
            MixturePolicy::scaled(mdp, benchmark.clone(), T::one() - eta),
        )
    };
    if shrink(oracle, T::one())? != Verdict::PreferLeft {
        return Ok(PrecisionEstimate { eta: T::one(), iterations: 1, saturated: true, floor: false });
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut iterations = 1;
    let mut floor = false;
    while iterations < max_iterations {
        if hi <= search.eta_min {
            floor = true;
            break;
        }
        if hi - lo <= search.rel_tol * hi {
            break;
        }
        let eta = (lo + hi) / T::lit(2.0);
        iterations += 1;
        if shrink(oracle, eta)? == Verdict::PreferLeft {
            hi = eta;
        } else {
            lo = eta;
        }
    }
    if hi <= search.eta_min {
        floor = true;
    }
    let eta = if floor { search.eta_min } else { hi };
    Ok(PrecisionEstimate { eta, iterations, saturated: false, floor })
}
