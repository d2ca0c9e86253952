//! Benchmark selection, the directional basis, and ratio estimation by bisection.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::feedback::{Oracle, OracleError, Phase, Responder, Verdict};
use crate::linalg::{axpy, dot, norm2};
use crate::momdp::{scalarized_plan, vector_value, MixturePolicy, Momdp, Policy, ValueVector};
use crate::Scalar;

/// A policy together with its value vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    pub policy: Policy,
    pub value: ValueVector<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSelection<T> {
    /// Index into `candidates` of the selected benchmark.
    pub index: usize,
    /// The single-objective optimal policies, objective order.
    pub candidates: Vec<Candidate<T>>,
    pub comparisons_used: usize,
}

impl<T: Scalar> BenchmarkSelection<T> {
    pub fn benchmark(&self) -> &Candidate<T> {
        &self.candidates[self.index]
    }
}

/// Optimal policy for each objective alone.
pub fn single_objective_candidates<T: Scalar>(mdp: &Momdp<T>) -> Vec<Candidate<T>> {
    let k = mdp.objectives();
    (0..k)
        .map(|j| {
            let mut e = vec![T::zero(); k];
            e[j] = T::one();
            let (policy, _) = scalarized_plan(mdp, &e);
            let value = vector_value(mdp, &policy);
            Candidate { policy, value }
        })
        .collect()
}

/// Keeps the incumbent unless the challenger is strictly preferred.
pub fn select_benchmark<T: Scalar, R: Responder<T>>(
    oracle: &mut Oracle<'_, T, R>,
) -> Result<BenchmarkSelection<T>, OracleError> {
    let candidates = single_objective_candidates(oracle.mdp());
    let mut index = 0;
    let mut comparisons_used = 0;
    for challenger in 1..candidates.len() {
        let verdict = oracle.compare(
            Phase::Benchmark,
            MixturePolicy::pure(candidates[index].policy.clone()),
            MixturePolicy::pure(candidates[challenger].policy.clone()),
        )?;
        comparisons_used += 1;
        if verdict == Verdict::PreferRight {
            index = challenger;
        }
    }
    Ok(BenchmarkSelection { index, candidates, comparisons_used })
}

/// Orthonormal basis of the orthogonal complement of `span(values)` in `R^dim`.
///
/// The values are orthonormalized first; then the standard basis vectors are
/// orthogonalized against everything kept so far, in ascending index order,
/// and kept when the residual norm exceeds `tol`. Each projection is done twice
/// to keep the result orthonormal to working precision.
pub fn orthonormal_complement<T: Scalar>(values: &[Vec<T>], dim: usize, tol: T) -> Vec<Vec<T>> {
    let mut span: Vec<Vec<T>> = Vec::new();
    for v in values {
        assert_eq!(v.len(), dim, "value dimension");
        if let Some(q) = orthogonalized(v.clone(), &span, tol) {
            span.push(q);
        }
    }
    let mut complement = Vec::new();
    for j in 0..dim {
        let mut e = vec![T::zero(); dim];
        e[j] = T::one();
        if let Some(q) = orthogonalized(e, &span, tol) {
            span.push(q.clone());
            complement.push(q);
        }
    }
    complement
}

fn orthogonalized<T: Scalar>(mut v: Vec<T>, against: &[Vec<T>], tol: T) -> Option<Vec<T>> {
    for _ in 0..2 {
        for q in against {
            let c = dot(q, &v);
            axpy(-c, q, &mut v);
        }
    }
    let n = norm2(&v);
    if n <= tol {
        return None;
    }
    v.iter_mut().for_each(|x| *x = *x / n);
    Some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisEntry<T> {
    pub policy: Policy,
    pub value: ValueVector<T>,
    pub direction: Vec<T>,
    pub magnitude: T,
}

/// Policies whose values span the achievable value space, first entry the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalBasis<T> {
    pub entries: Vec<BasisEntry<T>>,
    pub rank_tol: T,
}

impl<T: Scalar> DirectionalBasis<T> {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn values(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|e| e.value.0.clone()).collect()
    }

    pub fn magnitudes(&self) -> Vec<T> {
        self.entries.iter().map(|e| e.magnitude).collect()
    }

    pub fn benchmark(&self) -> &BasisEntry<T> {
        &self.entries[0]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BasisError {
    #[error("benchmark value has norm {norm}, not above the rank tolerance {tol}")]
    ZeroBenchmark { norm: f64, tol: f64 },
}

/// Rank tolerance `scale * sqrt(k) * H`.
pub fn rank_tolerance<T: Scalar>(mdp: &Momdp<T>, scale: f64) -> T {
    T::lit(scale) * mdp.value_norm_bound()
}

/// Greedily extends the benchmark with the policy reaching furthest along a
/// direction orthogonal to the values collected so far. Asks no questions.
pub fn build_directional_basis<T: Scalar>(
    mdp: &Momdp<T>,
    benchmark: &Candidate<T>,
    rank_tol: T,
) -> Result<DirectionalBasis<T>, BasisError> {
    let k = mdp.objectives();
    let norm = benchmark.value.norm();
    if norm <= rank_tol {
        return Err(BasisError::ZeroBenchmark { norm: norm.to_f64_lossy(), tol: rank_tol.to_f64_lossy() });
    }
    let mut entries = vec![BasisEntry {
        policy: benchmark.policy.clone(),
        value: benchmark.value.clone(),
        direction: benchmark.value.iter().map(|&v| v / norm).collect(),
        magnitude: norm,
    }];
    for _ in 2..=k {
        let values: Vec<Vec<T>> = entries.iter().map(|e| e.value.0.clone()).collect();
        let complement = orthonormal_complement(&values, k, rank_tol);
        let mut best: Option<(T, Policy, Vec<T>)> = None;
        for rho in complement {
            let (plus, v_plus) = scalarized_plan(mdp, &rho);
            let neg: Vec<T> = rho.iter().map(|&x| -x).collect();
            let (minus, v_minus) = scalarized_plan(mdp, &neg);
            let (magnitude, policy) =
                if v_plus.abs() >= v_minus.abs() { (v_plus.abs(), plus) } else { (v_minus.abs(), minus) };
            if best.as_ref().is_none_or(|(m, _, _)| magnitude > *m) {
                best = Some((magnitude, policy, rho));
            }
        }
        match best {
            Some((magnitude, policy, direction)) if magnitude > rank_tol => {
                let value = vector_value(mdp, &policy);
                entries.push(BasisEntry { policy, value, direction, magnitude });
            }
            _ => break,
        }
    }
    Ok(DirectionalBasis { entries, rank_tol })
}

type CacheKey = (String, String);

#[derive(Serialize, Deserialize)]
struct CacheRecord<T> {
    instance: String,
    benchmark: String,
    basis: DirectionalBasis<T>,
}

/// Shared directional bases keyed by (instance digest, benchmark policy digest).
///
/// The basis depends only on the instance and the benchmark, so users who end
/// up with the same benchmark reuse it.
#[derive(Debug, Clone, Default)]
pub struct BasisCache<T> {
    inner: Arc<Mutex<HashMap<CacheKey, DirectionalBasis<T>>>>,
}

impl<T: Scalar> BasisCache<T> {
    pub fn new() -> Self {
        Self { inner: Arc::new(Mutex::new(HashMap::new())) }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("basis cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_build(
        &self,
        mdp: &Momdp<T>,
        benchmark: &Candidate<T>,
        rank_tol: T,
    ) -> Result<DirectionalBasis<T>, BasisError> {
        let key = (mdp.digest().to_string(), benchmark.policy.digest());
        if let Some(basis) = self.inner.lock().expect("basis cache lock").get(&key) {
            return Ok(basis.clone());
        }
        let basis = build_directional_basis(mdp, benchmark, rank_tol)?;
        self.inner.lock().expect("basis cache lock").insert(key, basis.clone());
        Ok(basis)
    }
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> BasisCache<T> {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let map = self.inner.lock().expect("basis cache lock");
        let mut records: Vec<CacheRecord<T>> = map
            .iter()
            .map(|((instance, benchmark), basis)| CacheRecord {
                instance: instance.clone(),
                benchmark: benchmark.clone(),
                basis: basis.clone(),
            })
            .collect();
        records.sort_by(|a, b| (&a.instance, &a.benchmark).cmp(&(&b.instance, &b.benchmark)));
        let json = serde_json::to_vec_pretty(&records).map_err(std::io::Error::other)?;
        std::fs::write(path, json)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let records: Vec<CacheRecord<T>> =
            serde_json::from_slice(&std::fs::read(path)?).map_err(std::io::Error::other)?;
        let cache = Self::new();
        {
            let mut map = cache.inner.lock().expect("basis cache lock");
            for r in records {
                map.insert((r.instance, r.benchmark), r.basis);
            }
        }
        Ok(cache)
    }
}

/// Bisection settings for ratio estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSearch<T> {
    /// Search window is `[0, 2 * cap]`, first probe at `cap`.
    pub cap: T,
    /// Resolution at which the search gives up without an indistinguishable answer.
    pub eta_stop: T,
    /// Smallest ratio probed by the low-signal guard.
    pub eta_min: T,
}

impl<T: Scalar> RatioSearch<T> {
    /// Cap `2k` for `k` objectives.
    pub fn for_objectives(k: usize, eta_stop: T, eta_min: T) -> Self {
        Self { cap: T::lit(2.0 * k as f64), eta_stop, eta_min }
    }

    /// `ceil(log2(2 * cap / eta_stop))`, i.e. `ceil(log2(4k / eta_stop))`.
    pub fn max_iterations(&self) -> usize {
        let window = (T::lit(2.0) * self.cap / self.eta_stop).to_f64_lossy();
        window.log2().ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioOutcome<T> {
    pub ratio: T,
    pub iterations: usize,
    pub converged: bool,
    /// Set only by the guarded search when every probe was indistinguishable.
    pub low_signal: bool,
}

/// Compares the benchmark (scaled) against the target (scaled) at ratio `alpha`.
fn probe<T: Scalar, R: Responder<T>>(
    oracle: &mut Oracle<'_, T, R>,
    benchmark: &Policy,
    target: &Policy,
    alpha: T,
) -> Result<Verdict, OracleError> {
    let mdp = oracle.mdp();
    if alpha > T::one() {
        oracle.compare(
            Phase::Ratio,
            MixturePolicy::pure(benchmark.clone()),
            MixturePolicy::scaled(mdp, target.clone(), T::one() / alpha),
        )
    } else {
        // Indistinguishable is symmetric, and "target preferred" means alpha is too small.
        oracle
            .compare(
                Phase::Ratio,
                MixturePolicy::pure(target.clone()),
                MixturePolicy::scaled(mdp, benchmark.clone(), alpha),
            )
            .map(Verdict::swapped)
    }
}

/// Bisection for the ratio of the target's personalized value to the benchmark's.
///
/// With `guard`, an indistinguishable first answer triggers two more probes at
/// the window's top and at `eta_min`; if those are indistinguishable as well the
/// outcome is flagged as low signal.
pub fn estimate_ratio<T: Scalar, R: Responder<T>>(
    oracle: &mut Oracle<'_, T, R>,
    benchmark: &Policy,
    target: &Policy,
    search: &RatioSearch<T>,
    guard: bool,
) -> Result<RatioOutcome<T>, OracleError> {
    let two = T::lit(2.0);
    let max_iterations = search.max_iterations();
    let (mut lo, mut hi) = (T::zero(), two * search.cap);
    let mut alpha = search.cap;
    let mut iterations = 0;
    loop {
        // PreferLeft here means the benchmark side wins: alpha is too large.
        let verdict = probe(oracle, benchmark, target, alpha)?;
        iterations += 1;
        match verdict {
            Verdict::Indistinguishable => {
                let mut low_signal = false;
                if guard && iterations == 1 {
                    low_signal = true;
                    for edge in [two * search.cap, search.eta_min] {
                        iterations += 1;
                        if probe(oracle, benchmark, target, edge)? != Verdict::Indistinguishable {
                            low_signal = false;
                            break;
                        }
                    }
                }
                return Ok(RatioOutcome { ratio: alpha, iterations, converged: true, low_signal });
            }
            Verdict::PreferLeft => hi = alpha,
            Verdict::PreferRight => lo = alpha,
        }
        alpha = (lo + hi) / two;
        if iterations >= max_iterations {
            return Ok(RatioOutcome { ratio: alpha, iterations, converged: false, low_signal: false });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimates<T> {
    pub ratios: Vec<T>,
    pub cap: T,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub low_signal: bool,
}

impl<T: Scalar> RatioEstimates<T> {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }
}

/// One ratio per non-benchmark basis policy; the first search is guarded.
pub fn estimate_all_ratios<T: Scalar, R: Responder<T>>(
    oracle: &mut Oracle<'_, T, R>,
    basis: &DirectionalBasis<T>,
    search: &RatioSearch<T>,
) -> Result<RatioEstimates<T>, OracleError> {
    let benchmark = &basis.benchmark().policy;
    let mut out = RatioEstimates {
        ratios: Vec::new(),
        cap: search.cap,
        iterations: Vec::new(),
        converged: Vec::new(),
        low_signal: false,
    };
    for (i, entry) in basis.entries.iter().enumerate().skip(1) {
        let outcome = estimate_ratio(oracle, benchmark, &entry.policy, search, i == 1)?;
        out.ratios.push(outcome.ratio);
        out.iterations.push(outcome.iterations);
        out.converged.push(outcome.converged);
        out.low_signal |= outcome.low_signal;
    }
    Ok(out)
}
