//! Carathéodory compression of a finite convex combination.

use crate::linalg::null_vector;
use crate::Scalar;

/// Weights at or below this are treated as exact zeros and their points dropped.
pub const WEIGHT_FLOOR: f64 = 1e-15;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum C4Error {
    #[error("weights do not form a probability vector: {0}")]
    NotASimplex(String),
    #[error("points must all have dimension {expected}, point {index} has {found}")]
    DimensionMismatch { expected: usize, index: usize, found: usize },
}

/// Reduces a convex combination of `k`-dimensional points to at most `k + 1`
/// of them with the same weighted mean.
///
/// Returns the kept indices (ascending) and their new weights. Each round
/// takes the first `k + 2` surviving points, finds a null vector `x` of their
/// lifted matrix `[mu_i; 1]`, and moves the weights along `-x` until the point
/// with the largest `|x_i| / p_i` (lowest index on ties) reaches zero.
pub fn c4_compress<T: Scalar>(points: &[Vec<T>], weights: &[T]) -> Result<(Vec<usize>, Vec<T>), C4Error> {
    if points.len() != weights.len() {
        return Err(C4Error::NotASimplex(format!("{} weights for {} points", weights.len(), points.len())));
    }
    if points.is_empty() {
        return Err(C4Error::NotASimplex("empty combination".into()));
    }
    let k = points[0].len();
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| p.len() != k) {
        return Err(C4Error::DimensionMismatch { expected: k, index, found: p.len() });
    }
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < T::zero()) {
        return Err(C4Error::NotASimplex(format!("weight {i} is {w}")));
    }
    let sum: T = weights.iter().copied().sum();
    if (sum - T::one()).abs() > T::tol(SIMPLEX_TOL) {
        return Err(C4Error::NotASimplex(format!("weights sum to {sum}")));
    }
    if points.len() <= k + 1 {
        return Ok(((0..points.len()).collect(), weights.to_vec()));
    }

    let floor = T::lit(WEIGHT_FLOOR);
    let mut p = weights.to_vec();
    let mut active: Vec<usize> = (0..points.len()).filter(|&i| p[i] > floor).collect();
    while active.len() > k + 1 {
        let chosen = &active[..k + 2];
        let lifted: Vec<Vec<T>> = chosen
            .iter()
            .map(|&i| {
                let mut v = points[i].clone();
                v.push(T::one());
                v
            })
            .collect();
        let mut x = null_vector(&lifted);

        let mut i0 = 0;
        let mut best = T::neg_infinity();
        for (j, &i) in chosen.iter().enumerate() {
            let ratio = x[j].abs() / p[i];
            if ratio > best {
                best = ratio;
                i0 = j;
            }
        }
        if x[i0] < T::zero() {
            x.iter_mut().for_each(|v| *v = -*v);
        }
        let gamma = p[chosen[i0]] / x[i0];
        for (j, &i) in chosen.iter().enumerate() {
            p[i] = p[i] - gamma * x[j];
        }
        p[chosen[i0]] = T::zero();
        for &i in chosen {
            if p[i] <= floor {
                p[i] = T::zero();
            }
        }
        active.retain(|&i| p[i] > T::zero());
    }

    let total: T = active.iter().map(|&i| p[i]).sum();
    let kept_weights = active.iter().map(|&i| p[i] / total).collect();
    Ok((active, kept_weights))
}
