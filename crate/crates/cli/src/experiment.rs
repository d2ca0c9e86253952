//! Seeded end-to-end experiments on random instances.
//!
//! Every trial draws its dimensions and its instance from its own ChaCha
//! stream derived from `(seed, trial)`, so results do not depend on how many
//! worker threads run the trials or in which order they finish.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use mopref_core::elicit::optimal_personalized_value;
use mopref_core::momdp::DoNothingRef;
use mopref_core::{
    run_elicitation, validate_set, ComparisonQuery, ElicitationError, ElicitationReport, EngineConfig,
    InstanceDocument, Momdp64, OracleError, OracleSession, Representation, Responder, SimulatedUser, SolveMode,
    Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const TRIALS_HEADER: &str = "# mopref-trials v1";
pub const TIMINGS_HEADER: &str = "# mopref-timings v1";
pub const SUMMARY_HEADER: &str = "# mopref-summary v1";

/// Policies are enumerated for the optimal value when there are at most this many.
pub const DEFAULT_ENUMERATION_LIMIT: u64 = 1_000_000;

/// Either a fixed size or an inclusive `[lo, hi]` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DimRange {
    Fixed(usize),
    Range([usize; 2]),
}

impl DimRange {
    pub fn bounds(self) -> (usize, usize) {
        match self {
            DimRange::Fixed(n) => (n, n),
            DimRange::Range([lo, hi]) => (lo, hi),
        }
    }

    fn sample(self, rng: &mut impl Rng) -> usize {
        let (lo, hi) = self.bounds();
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

/// Instance dimensions. `actions` excludes the do-nothing action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub objectives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub states: DimRange,
    pub actions: DimRange,
    pub horizon: DimRange,
    pub objectives: DimRange,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub mode: SolveMode,
    #[serde(default)]
    pub representation: Representation,
    #[serde(default = "default_enumeration_limit")]
    pub enumeration_limit: u64,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_enumeration_limit() -> u64 {
    DEFAULT_ENUMERATION_LIMIT
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid experiment config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("trials must be positive")]
    NoTrials,
    #[error("{field} range {lo}..={hi} is empty or contains zero")]
    Dims { field: &'static str, lo: usize, hi: usize },
    #[error("epsilon grid is empty")]
    NoEpsilons,
    #[error("epsilon {0} is not a positive finite number")]
    Epsilon(f64),
    #[error("threads must be positive")]
    Threads,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.trials == 0 {
            return Err(ConfigError::NoTrials);
        }
        for (field, range) in [
            ("states", self.states),
            ("actions", self.actions),
            ("horizon", self.horizon),
            ("objectives", self.objectives),
        ] {
            let (lo, hi) = range.bounds();
            if lo == 0 || lo > hi {
                return Err(ConfigError::Dims { field, lo, hi });
            }
        }
        if self.epsilons.is_empty() {
            return Err(ConfigError::NoEpsilons);
        }
        if let Some(&e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(ConfigError::Epsilon(e));
        }
        if self.threads == Some(0) {
            return Err(ConfigError::Threads);
        }
        Ok(())
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig { mode: self.mode, representation: self.representation, ..EngineConfig::default() }
    }

    /// Dimensions of trial `trial`, drawn from a stream separate from the instance's.
    pub fn trial_dims(&self, trial: u64) -> Dims {
        let mut rng = stream(self.seed, 2 * trial + 1);
        Dims {
            states: self.states.sample(&mut rng),
            actions: self.actions.sample(&mut rng),
            horizon: self.horizon.sample(&mut rng),
            objectives: self.objectives.sample(&mut rng),
        }
    }

    /// The epsilon grid, largest first.
    pub fn epsilon_grid(&self) -> Vec<f64> {
        let mut grid = self.epsilons.clone();
        grid.sort_by(|a, b| b.total_cmp(a));
        grid.dedup();
        grid
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A random instance together with the hidden preference of its simulated user.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub seed: u64,
    pub trial: u64,
    pub dims: Dims,
    pub document: InstanceDocument,
    pub mdp: Momdp64,
    pub preference: Vec<f64>,
}

impl GeneratedInstance {
    pub fn user(&self, epsilon: f64) -> SimulatedUser<f64> {
        SimulatedUser::new(self.preference.clone(), epsilon).expect("generated preference is nonnegative")
    }
}

/// Draws a dense random instance and a preference vector for trial `trial`.
///
/// States are `s0..`, actions `a0` (do nothing, only at `s0`) and `a1..`,
/// available everywhere. Transition rows are normalized uniform draws,
/// rewards are uniform in `[0, 1]^k`, and the preference is uniform on the
/// nonnegative orthant rescaled to a norm drawn uniformly from `[1, 2]`.
pub fn generate_instance(seed: u64, trial: u64, dims: Dims) -> GeneratedInstance {
    let mut rng = stream(seed, 2 * trial);
    let k = dims.objectives;
    let states: Vec<String> = (0..dims.states).map(|s| format!("s{s}")).collect();
    let actions: Vec<String> = (0..=dims.actions).map(|a| format!("a{a}")).collect();
    let mut transitions = BTreeMap::new();
    let mut rewards = BTreeMap::new();
    for (s, state) in states.iter().enumerate() {
        let mut rows = BTreeMap::new();
        let mut rews = BTreeMap::new();
        if s == 0 {
            rows.insert(actions[0].clone(), BTreeMap::from([(states[0].clone(), 1.0)]));
            rews.insert(actions[0].clone(), vec![0.0; k]);
        }
        for action in &actions[1..] {
            // Draws in (0, 1] keep every successor in the support.
            let draws: Vec<f64> = (0..dims.states).map(|_| 1.0 - rng.random::<f64>()).collect();
            let total: f64 = draws.iter().sum();
            let row = states.iter().cloned().zip(draws.iter().map(|d| d / total)).collect();
            rows.insert(action.clone(), row);
            rews.insert(action.clone(), (0..k).map(|_| rng.random::<f64>()).collect());
        }
        transitions.insert(state.clone(), rows);
        rewards.insert(state.clone(), rews);
    }
    let document = InstanceDocument {
        k,
        horizon: dims.horizon,
        states: states.clone(),
        actions: actions.clone(),
        initial_state: states[0].clone(),
        do_nothing: DoNothingRef { state: states[0].clone(), action: actions[0].clone() },
        available_actions: None,
        transitions,
        rewards,
    };
    let mdp = Momdp64::from_document(&document).expect("generated instance is valid");

    let mut preference: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let mut norm = preference.iter().map(|w| w * w).sum::<f64>().sqrt();
    while norm == 0.0 {
        preference = (0..k).map(|_| rng.random::<f64>()).collect();
        norm = preference.iter().map(|w| w * w).sum::<f64>().sqrt();
    }
    let target = rng.random_range(1.0..=2.0);
    for w in &mut preference {
        *w *= target / norm;
    }
    GeneratedInstance { seed, trial, dims, document, mdp, preference }
}

/// One trial at one precision. Wall time is kept out of the row so that
/// trial CSVs are byte-for-byte reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: u64,
    pub seed: u64,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub objectives: usize,
    pub epsilon: f64,
    pub mode: String,
    pub representation: String,
    pub queries_benchmark: usize,
    pub queries_ratio: usize,
    pub queries_precision: usize,
    pub queries_total: usize,
    pub query_cap: usize,
    pub v_star: f64,
    pub v_star_exhaustive: bool,
    pub achieved: f64,
    pub suboptimality: f64,
    pub relative_suboptimality: f64,
    pub d: usize,
    pub d_delta: usize,
    pub eta_hat: Option<f64>,
    pub low_signal: bool,
    pub unconverged_ratios: bool,
    /// Converged ratios whose indistinguishable probe violates the stopping rule.
    pub ratio_rule_violations: usize,
    /// `Some(ok)` when the benchmark guarantee applies (`epsilon <= v*/(2k)`).
    pub benchmark_guard: Option<bool>,
    /// Trajectory-set payloads that failed validation.
    pub invalid_payloads: usize,
}

impl TrialRow {
    pub fn within_cap(&self) -> bool {
        self.queries_total <= self.query_cap
    }
}

#[derive(Debug, Clone)]
pub struct Trial {
    pub row: TrialRow,
    pub report: ElicitationReport<f64>,
    pub verdicts: Vec<Verdict>,
    pub elapsed: Duration,
}

/// Answers as the simulated user and validates every trajectory set shown.
struct CheckedUser<'a> {
    mdp: &'a Momdp64,
    user: SimulatedUser<f64>,
    invalid: usize,
}

impl Responder<f64> for CheckedUser<'_> {
    fn respond(&mut self, query: &ComparisonQuery<f64>) -> Result<Verdict, OracleError> {
        let c = &query.comparison;
        for side in [&c.left, &c.right] {
            if let Some(set) = &side.trajectories {
                if !validate_set(self.mdp, &side.policy, set).is_valid() {
                    self.invalid += 1;
                }
            }
        }
        self.user.respond(query)
    }
}

pub fn mode_name(mode: SolveMode) -> &'static str {
    match mode {
        SolveMode::Full => "full",
        SolveMode::Truncated => "truncated",
    }
}

pub fn representation_name(rep: Representation) -> &'static str {
    match rep {
        Representation::Explicit => "explicit",
        Representation::TrajectorySet => "trajectory_set",
    }
}

/// Counts converged ratios that break `|alpha <w,V1> - <w,Vi>| <= eps`, or
/// `|<w,V1> - <w,Vi>/alpha| <= eps` for `alpha > 1`. Allows a few ulps of slack.
pub fn ratio_rule_violations(report: &ElicitationReport<f64>, preference: &[f64], epsilon: f64) -> usize {
    let b = report.basis_values[0].dot(preference);
    report
        .ratios
        .ratios
        .iter()
        .zip(&report.ratios.converged)
        .zip(&report.basis_values[1..])
        .filter(|((&alpha, &converged), value)| {
            if !converged {
                return false;
            }
            let c = value.dot(preference);
            let gap = if alpha > 1.0 { b - c / alpha } else { alpha * b - c };
            gap.abs() > epsilon + 1e-12 * (b.abs() + c.abs())
        })
        .count()
}

/// Runs one elicitation against the simulated user at precision `epsilon`.
pub fn run_trial(
    instance: &GeneratedInstance,
    epsilon: f64,
    engine: &EngineConfig,
    enumeration_limit: u64,
) -> Result<Trial, ElicitationError> {
    let start = Instant::now();
    let mdp = &instance.mdp;
    let mut responder = CheckedUser { mdp, user: instance.user(epsilon), invalid: 0 };
    let mut session = OracleSession::new(None);
    let report = run_elicitation(mdp, &mut session, &mut responder, engine, None)?;
    let w = &instance.preference;
    let (v_star, exhaustive) = optimal_personalized_value(mdp, w, enumeration_limit as u128);
    let achieved = report.output_value.dot(w);
    let suboptimality = v_star - achieved;
    let k = mdp.objectives();
    let guard_applies = epsilon <= v_star / (2.0 * k as f64);
    let row = TrialRow {
        trial: instance.trial,
        seed: instance.seed,
        states: instance.dims.states,
        actions: instance.dims.actions,
        horizon: instance.dims.horizon,
        objectives: k,
        epsilon,
        mode: mode_name(engine.mode).into(),
        representation: representation_name(engine.representation).into(),
        queries_benchmark: report.queries.benchmark,
        queries_ratio: report.queries.ratio,
        queries_precision: report.queries.precision,
        queries_total: report.queries.total,
        query_cap: engine.query_cap(k, report.d),
        v_star,
        v_star_exhaustive: exhaustive,
        achieved,
        suboptimality,
        relative_suboptimality: if v_star > 0.0 { suboptimality / v_star } else { 0.0 },
        d: report.d,
        d_delta: report.estimate.d_delta,
        eta_hat: report.eta_hat,
        low_signal: report.flags.low_signal,
        unconverged_ratios: report.flags.unconverged_ratios,
        ratio_rule_violations: ratio_rule_violations(&report, w, epsilon),
        benchmark_guard: guard_applies.then(|| report.benchmark_value.dot(w) >= v_star / (2.0 * k as f64) - 1e-9),
        invalid_payloads: responder.invalid,
    };
    Ok(Trial { row, report, verdicts: session.verdicts(), elapsed: start.elapsed() })
}

#[derive(Debug, Clone)]
pub struct Timing {
    pub trial: u64,
    pub epsilon: f64,
    pub wall: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<TrialRow>,
    pub timings: Vec<Timing>,
}

/// Runs every trial at every precision of the grid. Rows come back sorted by
/// trial, then by decreasing epsilon.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ElicitationError> {
    let engine = config.engine();
    let grid = config.epsilon_grid();
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(config.trials)
        .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(u64, usize, Trial)>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<(u64, ElicitationError)>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let trial = next.fetch_add(1, Ordering::Relaxed);
                if trial >= config.trials || failure.lock().unwrap().is_some() {
                    break;
                }
                let trial = trial as u64;
                let instance = generate_instance(config.seed, trial, config.trial_dims(trial));
                for (i, &eps) in grid.iter().enumerate() {
                    match run_trial(&instance, eps, &engine, config.enumeration_limit) {
                        Ok(t) => results.lock().unwrap().push((trial, i, t)),
                        Err(e) => {
                            let mut slot = failure.lock().unwrap();
                            if slot.as_ref().is_none_or(|(t, _)| trial < *t) {
                                *slot = Some((trial, e));
                            }
                            return;
                        }
                    }
                }
            });
        }
    });
    if let Some((_, e)) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(trial, i, _)| (*trial, *i));
    let mut out = ExperimentOutput::default();
    for (trial, _, t) in results {
        out.timings.push(Timing { trial, epsilon: t.row.epsilon, wall: t.elapsed });
        out.rows.push(t.row);
    }
    Ok(out)
}

/// Writes `rows` as CSV under a versioned comment line.
pub fn write_trials(mut out: impl Write, rows: &[TrialRow]) -> Result<(), csv::Error> {
    writeln!(out, "{TRIALS_HEADER}")?;
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trials(text: &str) -> Result<Vec<TrialRow>, csv::Error> {
    let body = text.strip_prefix(TRIALS_HEADER).map_or(text, |rest| rest.trim_start_matches(['\r', '\n']));
    csv::Reader::from_reader(body.as_bytes()).deserialize().collect()
}

pub fn write_timings(mut out: impl Write, timings: &[Timing]) -> Result<(), csv::Error> {
    writeln!(out, "{TIMINGS_HEADER}")?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["trial", "epsilon", "wall_ms"])?;
    for t in timings {
        writer.write_record([
            t.trial.to_string(),
            t.epsilon.to_string(),
            format!("{:.3}", t.wall.as_secs_f64() * 1e3),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub trials: usize,
    pub median_suboptimality: f64,
    pub p25_suboptimality: f64,
    pub p75_suboptimality: f64,
    pub p90_suboptimality: f64,
    pub max_suboptimality: f64,
    pub median_relative_suboptimality: f64,
    pub median_queries: f64,
    pub max_queries: usize,
    pub cap_violations: usize,
    pub ratio_rule_violations: usize,
    pub guard_violations: usize,
    pub invalid_payloads: usize,
    pub low_signal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// One entry per precision, largest first.
    pub per_epsilon: Vec<EpsilonSummary>,
    /// Median relative suboptimality never increases as epsilon shrinks.
    pub monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot summarize an empty set of trials")]
pub struct EmptyRows;

/// Linearly interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn aggregate(rows: &[TrialRow]) -> Result<Summary, EmptyRows> {
    if rows.is_empty() {
        return Err(EmptyRows);
    }
    let mut grid: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    let per_epsilon: Vec<EpsilonSummary> = grid
        .iter()
        .map(|&eps| {
            let group: Vec<&TrialRow> = rows.iter().filter(|r| r.epsilon == eps).collect();
            let sub: Vec<f64> = group.iter().map(|r| r.suboptimality).collect();
            let rel: Vec<f64> = group.iter().map(|r| r.relative_suboptimality).collect();
            let queries: Vec<f64> = group.iter().map(|r| r.queries_total as f64).collect();
            EpsilonSummary {
                epsilon: eps,
                trials: group.len(),
                median_suboptimality: quantile(&sub, 0.5),
                p25_suboptimality: quantile(&sub, 0.25),
                p75_suboptimality: quantile(&sub, 0.75),
                p90_suboptimality: quantile(&sub, 0.9),
                max_suboptimality: quantile(&sub, 1.0),
                median_relative_suboptimality: quantile(&rel, 0.5),
                median_queries: quantile(&queries, 0.5),
                max_queries: group.iter().map(|r| r.queries_total).max().unwrap_or(0),
                cap_violations: group.iter().filter(|r| !r.within_cap()).count(),
                ratio_rule_violations: group.iter().map(|r| r.ratio_rule_violations).sum(),
                guard_violations: group.iter().filter(|r| r.benchmark_guard == Some(false)).count(),
                invalid_payloads: group.iter().map(|r| r.invalid_payloads).sum(),
                low_signal: group.iter().filter(|r| r.low_signal).count(),
            }
        })
        .collect();
    let monotone =
        per_epsilon.windows(2).all(|w| w[1].median_relative_suboptimality <= w[0].median_relative_suboptimality);
    Ok(Summary { per_epsilon, monotone })
}

impl Summary {
    pub fn write_csv(&self, mut out: impl Write) -> Result<(), csv::Error> {
        writeln!(out, "{SUMMARY_HEADER}")?;
        let mut writer = csv::Writer::from_writer(out);
        for s in &self.per_epsilon {
            writer.serialize(s)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>10} {:>6} {:>12} {:>12} {:>12} {:>12} {:>9} {:>9} {:>6}\n",
            "epsilon", "trials", "med_subopt", "p90_subopt", "max_subopt", "med_rel", "med_q", "max_q", "capviol"
        );
        for e in &self.per_epsilon {
            s += &format!(
                "{:>10.1e} {:>6} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>9.1} {:>9} {:>6}\n",
                e.epsilon,
                e.trials,
                e.median_suboptimality,
                e.p90_suboptimality,
                e.max_suboptimality,
                e.median_relative_suboptimality,
                e.median_queries,
                e.max_queries,
                e.cap_violations,
            );
        }
        let violations: usize = self.per_epsilon.iter().map(|e| e.ratio_rule_violations + e.guard_violations).sum();
        s += &format!(
            "median relative suboptimality nonincreasing as epsilon shrinks: {}\n",
            if self.monotone { "pass" } else { "FAIL" }
        );
        s += &format!("stopping rule and benchmark guard violations: {violations}\n");
        s
    }
}

/// Runs the experiment and writes `trials.csv`, `timings.csv`, `summary.csv`
/// and `summary.txt` into `dir`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<Summary, ExperimentError> {
    let output = run_experiment(config)?;
    let summary = aggregate(&output.rows)?;
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_trials(create("trials.csv")?, &output.rows)?;
    write_timings(create("timings.csv")?, &output.timings)?;
    summary.write_csv(create("summary.csv")?)?;
    std::fs::write(dir.join("summary.txt"), summary.table())?;
    Ok(summary)
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Elicitation(#[from] ElicitationError),
    #[error(transparent)]
    Empty(#[from] EmptyRows),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
