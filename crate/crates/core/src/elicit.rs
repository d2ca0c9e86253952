//! The end-to-end elicitation pipeline and its report.

use serde::{Deserialize, Serialize};

use crate::basis::{
    estimate_all_ratios, rank_tolerance, select_benchmark, BasisCache, BasisError, RatioEstimates, RatioSearch,
};
use crate::feedback::{Oracle, OracleError, OracleSession, Phase, Representation, Responder};
use crate::momdp::{enumerate_policies, policy_count, scalarized_plan, vector_value, Momdp, Policy, ValueVector};
use crate::solver::{
    assemble_ratio_matrix, estimate_precision, solve_full, truncate_and_solve, truncation_threshold, PrecisionSearch,
    SolveMode, SolverError, WeightEstimate,
};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: SolveMode,
    pub representation: Representation,
    /// Smallest precision (and guard ratio) probed.
    pub eta_min: f64,
    /// Resolution of the ratio searches.
    pub eta_stop: f64,
    pub precision_rel_tol: f64,
    /// Rank tolerance as a multiple of the value norm bound `sqrt(k) * H`.
    pub tau_rank_scale: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: SolveMode::Full,
            representation: Representation::Explicit,
            eta_min: 1e-9,
            eta_stop: 1e-9,
            precision_rel_tol: 0.01,
            tau_rank_scale: 1e-8,
        }
    }
}

impl EngineConfig {
    pub fn ratio_search<T: Scalar>(&self, k: usize) -> RatioSearch<T> {
        RatioSearch::for_objectives(k, T::lit(self.eta_stop), T::lit(self.eta_min))
    }

    pub fn precision_search<T: Scalar>(&self) -> PrecisionSearch<T> {
        PrecisionSearch { eta_min: T::lit(self.eta_min), rel_tol: T::lit(self.precision_rel_tol) }
    }

    /// Upper bound on the number of comparisons for a basis of size `d`.
    pub fn query_cap(&self, k: usize, d: usize) -> usize {
        let ratio = self.ratio_search::<f64>(k).max_iterations();
        let precision = match self.mode {
            SolveMode::Full => 0,
            SolveMode::Truncated => self.precision_search::<f64>().max_iterations(),
        };
        k.saturating_sub(1) + d.saturating_sub(1) * ratio + precision
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryCounts {
    pub benchmark: usize,
    pub ratio: usize,
    pub precision: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flags {
    /// The benchmark looked indistinguishable from doing nothing.
    pub low_signal: bool,
    /// Some ratio search hit its iteration cap.
    pub unconverged_ratios: bool,
    /// The precision search bottomed out at `eta_min`.
    pub precision_floor: bool,
    /// The precision search could not tell the benchmark from doing nothing.
    pub precision_saturated: bool,
}

/// Ground-truth comparison, available when the preference is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics<T> {
    pub preference: Vec<T>,
    pub optimal_value: T,
    pub achieved_value: T,
    pub suboptimality: T,
    /// `true` when `optimal_value` came from enumerating every policy.
    pub exhaustive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationReport<T> {
    pub estimate: WeightEstimate<T>,
    pub output_policy: Policy,
    pub output_value: ValueVector<T>,
    pub benchmark_policy: Policy,
    pub benchmark_value: ValueVector<T>,
    /// Size of the directional basis.
    pub d: usize,
    /// Values of the basis policies, benchmark first.
    pub basis_values: Vec<ValueVector<T>>,
    /// Precision estimate in units of the benchmark value, truncated mode only.
    pub eta_hat: Option<T>,
    pub ratios: RatioEstimates<T>,
    pub queries: QueryCounts,
    pub flags: Flags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics<T>>,
}

impl<T: Scalar> ElicitationReport<T> {
    /// Attaches ground truth for a known preference vector.
    pub fn with_diagnostics(mut self, mdp: &Momdp<T>, preference: &[T], enumeration_limit: u128) -> Self {
        let (optimal_value, exhaustive) = optimal_personalized_value(mdp, preference, enumeration_limit);
        let achieved_value = self.output_value.dot(preference);
        self.diagnostics = Some(Diagnostics {
            preference: preference.to_vec(),
            optimal_value,
            achieved_value,
            suboptimality: optimal_value - achieved_value,
            exhaustive,
        });
        self
    }
}

/// Best personalized value: by enumeration when at most `limit` policies exist,
/// otherwise by planning directly on `preference`. The flag reports which.
pub fn optimal_personalized_value<T: Scalar>(mdp: &Momdp<T>, preference: &[T], limit: u128) -> (T, bool) {
    if policy_count(mdp).is_some_and(|n| n <= limit) {
        if let Ok(policies) = enumerate_policies(mdp, limit) {
            let best = policies.map(|p| vector_value(mdp, &p).dot(preference)).fold(T::neg_infinity(), T::max);
            return (best, true);
        }
    }
    (scalarized_plan(mdp, preference).1, false)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ElicitationError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Runs benchmark selection, basis construction, ratio estimation, (in
/// truncated mode) precision estimation, and the solve, asking `responder`
/// every comparison through `session`.
pub fn run_elicitation<T: Scalar, R: Responder<T>>(
    mdp: &Momdp<T>,
    session: &mut OracleSession<T>,
    responder: &mut R,
    config: &EngineConfig,
    cache: Option<&BasisCache<T>>,
) -> Result<ElicitationReport<T>, ElicitationError> {
    let k = mdp.objectives();
    let rank_tol: T = rank_tolerance(mdp, config.tau_rank_scale);
    let mut oracle = Oracle::new(mdp, session, responder, config.representation);

    let selection = select_benchmark(&mut oracle)?;
    let benchmark = selection.benchmark();
    let basis = match cache {
        Some(cache) => cache.get_or_build(mdp, benchmark, rank_tol)?,
        None => crate::basis::build_directional_basis(mdp, benchmark, rank_tol)?,
    };
    let ratios = estimate_all_ratios(&mut oracle, &basis, &config.ratio_search(k))?;
    let matrix = assemble_ratio_matrix(&basis, &ratios)?;

    let mut flags =
        Flags { low_signal: ratios.low_signal, unconverged_ratios: !ratios.all_converged(), ..Flags::default() };
    let (estimate, eta_hat) = match config.mode {
        SolveMode::Full => (solve_full(&matrix, rank_tol)?, None),
        SolveMode::Truncated => {
            let precision = estimate_precision(&mut oracle, &benchmark.policy, &config.precision_search())?;
            flags.precision_floor = precision.floor;
            flags.precision_saturated = precision.saturated;
            flags.low_signal |= precision.saturated;
            let delta = truncation_threshold(k, precision.eta);
            (truncate_and_solve(&matrix, &basis, delta, rank_tol)?, Some(precision.eta))
        }
    };

    let (output_policy, _) = scalarized_plan(mdp, &estimate.weights);
    let output_value = vector_value(mdp, &output_policy);
    let mut queries = QueryCounts::default();
    for record in oracle.session().transcript() {
        match record.phase {
            Phase::Benchmark => queries.benchmark += 1,
            Phase::Ratio => queries.ratio += 1,
            Phase::Precision => queries.precision += 1,
        }
        queries.total += 1;
    }
    Ok(ElicitationReport {
        estimate,
        output_policy,
        output_value,
        benchmark_policy: benchmark.policy.clone(),
        benchmark_value: benchmark.value.clone(),
        d: basis.dim(),
        basis_values: basis.entries.iter().map(|e| e.value.clone()).collect(),
        eta_hat,
        ratios,
        queries,
        flags,
        diagnostics: None,
    })
}
