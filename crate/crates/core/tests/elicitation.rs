mod common;

use common::*;
use mopref_core::basis::{single_objective_candidates, RatioSearch};
use mopref_core::feedback::{read_transcript, SessionError, SessionState};
use mopref_core::solver::{truncation_dim, PrecisionSearch};
use mopref_core::{
    assemble_ratio_matrix, build_directional_basis, enumerate_policies, estimate_all_ratios, estimate_precision,
    estimate_ratio, run_elicitation, scalarized_plan, select_benchmark, solve_full, truncate_and_solve, vector_value,
    BasisCache, Comparison, ElicitationError, EngineConfig, MixturePolicy, Momdp64, Oracle, OracleError, OracleSession,
    OracleSession64, Phase, Policy, ReplayResponder, Representation, SimulatedUser, SimulatedUser64, SolveMode,
    Verdict,
};
use proptest::prelude::*;
use rand::Rng;

fn user(w: &[f64], eps: f64) -> SimulatedUser64 {
    SimulatedUser::new(w.to_vec(), eps).unwrap()
}

fn arm(mdp: &Momdp64, a: usize) -> Policy {
    let _ = mdp;
    Policy::from_assignment(vec![vec![a]])
}

#[test]
fn bandit_benchmark_is_third_arm() {
    let mdp = bandit4();
    let w = [1.0, 1.0, 1.0];
    let candidates = single_objective_candidates(&mdp);
    let picks: Vec<usize> = candidates.iter().map(|c| c.policy.action(0, 0)).collect();
    assert_eq!(picks, vec![1, 3, 2]);
    let personalized: Vec<f64> = candidates.iter().map(|c| dot(&c.value, &w)).collect();
    assert!((personalized[0] - 1.75).abs() < 1e-12);
    assert!((personalized[1] - 170.0 / 96.0).abs() < 1e-12);
    assert!((personalized[2] - 0.75).abs() < 1e-12);

    let mut session = OracleSession::new(None);
    let mut u = user(&w, 1e-6);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let sel = select_benchmark(&mut oracle).unwrap();
    assert_eq!(sel.benchmark().policy.action(0, 0), 3);
    assert_eq!(sel.comparisons_used, 2);
    assert_eq!(session.transcript().len(), 2);
}

#[test]
fn single_objective_needs_no_benchmark_comparisons() {
    let mdp = bandit(&[vec![0.3], vec![0.9]]);
    let mut session = OracleSession::new(None);
    let mut u = user(&[1.0], 0.01);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let sel = select_benchmark(&mut oracle).unwrap();
    assert_eq!(sel.comparisons_used, 0);
    assert_eq!(sel.candidates.len(), 1);
}

#[test]
fn identical_candidates_keep_the_first() {
    let mdp = bandit(&[vec![0.5, 0.5]]);
    let mut session = OracleSession::new(None);
    let mut u = user(&[1.0, 2.0], 0.01);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let sel = select_benchmark(&mut oracle).unwrap();
    assert_eq!(sel.index, 0);
    assert_eq!(session.verdicts(), vec![Verdict::Indistinguishable]);
}

fn gram_rank(values: &[Vec<f64>], tol: f64) -> usize {
    // Rank by Gaussian elimination with partial pivoting on the Gram matrix rows.
    let mut m: Vec<Vec<f64>> = values.to_vec();
    let cols = m.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..m.len()).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())) else { break };
        if m[p][c].abs() <= tol {
            continue;
        }
        m.swap(rank, p);
        for r in 0..m.len() {
            if r != rank {
                let f = m[r][c] / m[rank][c];
                let pivot = m[rank].clone();
                for (x, y) in m[r].iter_mut().zip(&pivot) {
                    *x -= f * y;
                }
            }
        }
        rank += 1;
    }
    rank
}

#[test]
fn bandit_basis_restores_rank_with_fourth_arm() {
    let mdp = bandit4();
    let candidates = single_objective_candidates(&mdp);
    let benchmark = &candidates[1];
    let basis = build_directional_basis(&mdp, benchmark, 1e-8 * mdp.value_norm_bound()).unwrap();
    assert_eq!(basis.dim(), 3);
    let arms: Vec<usize> = basis.entries.iter().map(|e| e.policy.action(0, 0)).collect();
    assert_eq!(arms[0], 3);
    assert!(arms.contains(&4), "basis arms {arms:?}");
    assert_eq!(gram_rank(&basis.values(), 1e-9), 3);
    // The first three arms alone are rank deficient.
    let first_three: Vec<Vec<f64>> = (1..=3).map(|a| vector_value(&mdp, &arm(&mdp, a)).0).collect();
    assert_eq!(gram_rank(&first_three, 1e-9), 2);
}

#[test]
fn colinear_values_give_one_dimensional_basis() {
    let mdp = bandit(&[vec![0.2, 0.4], vec![0.4, 0.8]]);
    let candidates = single_objective_candidates(&mdp);
    let basis = build_directional_basis(&mdp, &candidates[0], 1e-8).unwrap();
    assert_eq!(basis.dim(), 1);
}

#[test]
fn basis_properties_on_random_instances() {
    let mut rng = rng(41);
    for _ in 0..40 {
        let mdp = random_small(&mut rng, 3, 2, 3, 4);
        let candidates = single_objective_candidates(&mdp);
        let Some(bench) = candidates.iter().find(|c| c.value.norm() > 1e-6) else { continue };
        let tol = 1e-8 * mdp.value_norm_bound();
        let basis = build_directional_basis(&mdp, bench, tol).unwrap();
        let d = basis.dim();
        assert_eq!(gram_rank(&basis.values(), tol), d);
        let policies: Vec<Policy> = enumerate_policies(&mdp, 1_000_000).unwrap().collect();
        let all_values: Vec<Vec<f64>> = policies.iter().map(|p| vector_value(&mdp, p).0).collect();
        // The basis spans every achievable value.
        assert_eq!(gram_rank(&all_values, tol), d);
        for i in 1..d {
            let e = &basis.entries[i];
            assert!(e.magnitude > tol);
            for v in &all_values {
                assert!(dot(&e.direction, v).abs() <= e.magnitude + 1e-9);
            }
            assert!((dot(&e.direction, &e.direction) - 1.0).abs() <= 1e-10);
            for j in 0..i {
                assert!(dot(&e.direction, &basis.entries[j].value).abs() <= 1e-9);
            }
        }
    }
}

/// Bandit with a benchmark of personalized value 2 and a target of value 1 under (1, 1, 1).
fn ratio_bandit() -> Momdp64 {
    bandit(&[vec![1.0, 1.0, 0.0], vec![0.5, 0.25, 0.25]])
}

#[test]
fn ratio_search_converges_within_precision() {
    let mdp = ratio_bandit();
    let mut session = OracleSession::new(None);
    let mut u = user(&[1.0, 1.0, 1.0], 0.01);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let search = RatioSearch::for_objectives(3, 1e-9, 1e-9);
    assert_eq!(search.cap, 6.0);
    let out = estimate_ratio(&mut oracle, &arm(&mdp, 1), &arm(&mdp, 2), &search, true).unwrap();
    assert!(out.converged);
    assert!((2.0 * out.ratio - 1.0).abs() <= 0.01, "{}", out.ratio);
    assert!(out.iterations <= search.max_iterations());

    let out = estimate_ratio(&mut oracle, &arm(&mdp, 1), &arm(&mdp, 1), &search, false).unwrap();
    assert!(out.converged);
    assert!((out.ratio - 1.0).abs() * 2.0 <= 0.01);
}

#[test]
fn zero_benchmark_signal_is_flagged() {
    // Under w = (0, 0, 1) the benchmark arm is worth nothing.
    let mdp = ratio_bandit();
    let mut session = OracleSession::new(None);
    let mut u = user(&[0.0, 0.0, 1.0], 0.5);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let search = RatioSearch::for_objectives(3, 1e-9, 1e-9);
    let out = estimate_ratio(&mut oracle, &arm(&mdp, 1), &arm(&mdp, 2), &search, true).unwrap();
    assert_eq!(out.ratio, 6.0);
    assert!(out.low_signal);
    assert_eq!(out.iterations, 3);
}

#[test]
fn ratio_search_hits_cap_without_tie() {
    let mdp = ratio_bandit();
    let mut session = OracleSession::new(None);
    let mut u = user(&[1.0, 1.0, 1.0], 0.0);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let search = RatioSearch::for_objectives(3, 1e-3, 1e-9);
    let out = estimate_ratio(&mut oracle, &arm(&mdp, 1), &arm(&mdp, 2), &search, false).unwrap();
    // 0.5 is dyadic in [0, 12], so an exact user eventually sees a tie; a coarse cap stops first.
    assert_eq!(out.iterations, search.max_iterations());
    assert!(!out.converged || out.ratio == 0.5);
}

#[test]
fn bandit_ratios_satisfy_stopping_rule() {
    let mdp = bandit4();
    let w = [1.0, 1.0, 1.0];
    let eps = 1e-6;
    let mut session = OracleSession::new(None);
    let mut u = user(&w, eps);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let sel = select_benchmark(&mut oracle).unwrap();
    let basis = build_directional_basis(&mdp, sel.benchmark(), 1e-8).unwrap();
    let search = RatioSearch::for_objectives(3, 1e-9, 1e-9);
    let ratios = estimate_all_ratios(&mut oracle, &basis, &search).unwrap();
    assert_eq!(ratios.ratios.len(), 2);
    let v1 = dot(&basis.entries[0].value, &w);
    for (i, &a) in ratios.ratios.iter().enumerate() {
        assert!(ratios.converged[i]);
        assert!(ratios.iterations[i] <= search.max_iterations());
        let vi = dot(&basis.entries[i + 1].value, &w);
        let gap = if a <= 1.0 { (a * v1 - vi).abs() } else { (v1 - vi / a).abs() };
        assert!(gap <= eps, "ratio {i}: gap {gap}");
    }
}

#[test]
fn precision_estimate_brackets_boundary() {
    let mdp = ratio_bandit();
    let search = PrecisionSearch { eta_min: 1e-9, rel_tol: 0.01 };

    let mut session = OracleSession::new(None);
    let mut u = user(&[1.0, 1.0, 1.0], 0.1);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let est = estimate_precision(&mut oracle, &arm(&mdp, 1), &search).unwrap();
    assert!((0.045..=0.055).contains(&est.eta), "{}", est.eta);
    assert!(!est.saturated && !est.floor);

    let mut session = OracleSession::new(None);
    let mut u = user(&[1.0, 1.0, 1.0], 3.0);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let est = estimate_precision(&mut oracle, &arm(&mdp, 1), &search).unwrap();
    assert_eq!(est.eta, 1.0);
    assert!(est.saturated);

    let mut session = OracleSession::new(None);
    let mut u = user(&[1.0, 1.0, 1.0], 0.0);
    let mut oracle = Oracle::new(&mdp, &mut session, &mut u, Representation::Explicit);
    let est = estimate_precision(&mut oracle, &arm(&mdp, 1), &search).unwrap();
    assert_eq!(est.eta, 1e-9);
    assert!(est.floor);
    assert!(est.iterations <= search.max_iterations());
}

#[test]
fn exact_ratios_recover_the_normalized_preference() {
    let mdp = bandit4();
    let w = [1.0, 1.0, 1.0];
    let candidates = single_objective_candidates(&mdp);
    let basis = build_directional_basis(&mdp, &candidates[1], 1e-8).unwrap();
    let v1 = dot(&basis.entries[0].value, &w);
    let exact: Vec<f64> = basis.entries[1..].iter().map(|e| dot(&e.value, &w) / v1).collect();
    let ratios = mopref_core::RatioEstimates {
        ratios: exact,
        cap: 6.0,
        iterations: vec![0; 2],
        converged: vec![true; 2],
        low_signal: false,
    };
    let m = assemble_ratio_matrix(&basis, &ratios).unwrap();
    let w_prime: Vec<f64> = w.iter().map(|x| x / v1).collect();
    let r = m.residual(&w_prime);
    assert!(r <= 1e-12, "{r}");

    let full = solve_full(&m, 1e-8).unwrap();
    assert!(full.residual <= 1e-8);
    let trunc = truncate_and_solve(&m, &basis, 1e-6, 1e-8).unwrap();
    assert_eq!(trunc.d_delta, 3);
    for p in enumerate_policies(&mdp, 100).unwrap() {
        let v = vector_value(&mdp, &p);
        assert!((dot(&full.weights, &v) - dot(&w_prime, &v)).abs() <= 1e-8);
        assert!((dot(&trunc.weights, &v) - dot(&w_prime, &v)).abs() <= 1e-8);
    }
    let big = truncate_and_solve(&m, &basis, 10.0, 1e-8).unwrap();
    assert_eq!(big.d_delta, truncation_dim(&basis.magnitudes(), 10.0));
}

#[test]
fn truncated_solution_lies_in_row_space() {
    let mut rng = rng(42);
    for _ in 0..30 {
        let mdp = random_instance(&mut rng, 3, 3, 3, 4);
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut session = OracleSession::new(None);
        let mut u = user(&w, 1e-4);
        let config = EngineConfig { mode: SolveMode::Truncated, ..EngineConfig::default() };
        let report = match run_elicitation(&mdp, &mut session, &mut u, &config, None) {
            Ok(r) => r,
            Err(e) => panic!("{e}"),
        };
        assert!(report.estimate.residual <= 1e-8);
        let candidates = single_objective_candidates(&mdp);
        let bench = candidates.iter().find(|c| c.policy == report.benchmark_policy).unwrap();
        let basis = build_directional_basis(&mdp, bench, 1e-8 * mdp.value_norm_bound()).unwrap();
        let rows = &basis.values()[..report.estimate.d_delta];
        // Remove the component along the kept rows; what remains must vanish.
        let q = mopref_core::orthonormal_complement(rows, 4, 1e-12);
        for z in q {
            assert!(dot(&z, &report.estimate.weights).abs() <= 1e-10);
        }
    }
}

#[test]
fn bandit_end_to_end() {
    let mdp = bandit4();
    for mode in [SolveMode::Full, SolveMode::Truncated] {
        let mut session = OracleSession::new(None);
        let mut u = user(&[1.0, 1.0, 1.0], 1e-6);
        let config = EngineConfig { mode, ..EngineConfig::default() };
        let report = run_elicitation(&mdp, &mut session, &mut u, &config, None).unwrap().with_diagnostics(
            &mdp,
            &[1.0, 1.0, 1.0],
            1_000_000,
        );
        assert_eq!(report.output_policy.action(0, 0), 3);
        let diag = report.diagnostics.as_ref().unwrap();
        assert_eq!(diag.suboptimality, 0.0);
        assert!(report.queries.total <= config.query_cap(3, report.d));
        assert_eq!(report.queries.total, session.transcript().len());
        assert_eq!(report.queries.benchmark + report.queries.ratio + report.queries.precision, report.queries.total);
    }
}

#[test]
fn huge_precision_does_not_crash() {
    let mdp = bandit4();
    let mut u = user(&[1.0, 1.0, 1.0], 0.5);
    for mode in [SolveMode::Full, SolveMode::Truncated] {
        let config = EngineConfig { mode, ..EngineConfig::default() };
        let mut session = OracleSession::new(None);
        let report = run_elicitation(&mdp, &mut session, &mut u, &config, None).unwrap().with_diagnostics(
            &mdp,
            &[1.0, 1.0, 1.0],
            1000,
        );
        let diag = report.diagnostics.unwrap();
        assert!(report.flags.low_signal || diag.suboptimality >= 0.0);
    }
}

#[test]
fn trajectory_sets_do_not_change_the_run() {
    let mut rng = rng(43);
    for _ in 0..10 {
        let mdp = random_instance(&mut rng, 4, 3, 3, 3);
        let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut reports = Vec::new();
        let mut verdicts = Vec::new();
        for representation in [Representation::Explicit, Representation::TrajectorySet] {
            let mut session = OracleSession::new(None);
            let mut u = user(&w, 1e-3);
            let config = EngineConfig { representation, mode: SolveMode::Truncated, ..EngineConfig::default() };
            reports.push(
                serde_json::to_string(&run_elicitation(&mdp, &mut session, &mut u, &config, None).unwrap()).unwrap(),
            );
            verdicts.push(session.verdicts());
        }
        assert_eq!(verdicts[0], verdicts[1]);
        assert_eq!(reports[0], reports[1]);
    }
}

#[test]
fn trajectory_set_queries_carry_payloads() {
    let mdp = coin_flip();
    let mut session: OracleSession64 = OracleSession::new(None);
    let config = EngineConfig { representation: Representation::TrajectorySet, ..EngineConfig::default() };
    let mut recorder = ReplayResponder::new(Vec::new());
    let err = run_elicitation(&mdp, &mut session, &mut recorder, &config, None).unwrap_err();
    assert!(matches!(err, ElicitationError::Oracle(OracleError::Awaiting { .. })));
    let q = recorder.parked().unwrap();
    for side in [&q.comparison.left, &q.comparison.right] {
        let set = side.trajectories.as_ref().unwrap();
        assert!(max_abs_diff(&set.weighted_return(), &side.value) <= 1e-8);
    }
}

#[test]
fn replaying_a_transcript_reproduces_the_run() {
    let mut rng = rng(44);
    let mdp = random_instance(&mut rng, 3, 3, 3, 3);
    let w = [0.2, 0.7, 0.4];
    let config = EngineConfig { mode: SolveMode::Truncated, ..EngineConfig::default() };
    let mut session = OracleSession::new(None);
    let mut u = user(&w, 1e-4);
    let direct = run_elicitation(&mdp, &mut session, &mut u, &config, None).unwrap();
    let verdicts = session.verdicts();

    // Feed answers one at a time, restarting from scratch each time.
    let mut answered = Vec::new();
    loop {
        let mut replay_session = OracleSession::new(None);
        let mut replay = ReplayResponder::new(answered.clone());
        match run_elicitation(&mdp, &mut replay_session, &mut replay, &config, None) {
            Ok(report) => {
                assert_eq!(report, direct);
                break;
            }
            Err(ElicitationError::Oracle(OracleError::Awaiting { query_id })) => {
                assert_eq!(query_id, format!("q{}", answered.len() + 1));
                let q = replay.parked().unwrap();
                let mut u = user(&w, 1e-4);
                let v = u.simulated_answer(&q.comparison.left.value, &q.comparison.right.value).unwrap();
                assert_eq!(v, verdicts[answered.len()]);
                answered.push(v);
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert_eq!(answered, verdicts);
}

#[test]
fn cached_basis_gives_identical_reports() {
    let mdp = bandit4();
    let cache = BasisCache::new();
    let config = EngineConfig::default();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let mut session = OracleSession::new(None);
        let mut u = user(&[1.0, 1.0, 1.0], 1e-6);
        reports.push(run_elicitation(&mdp, &mut session, &mut u, &config, Some(&cache)).unwrap());
    }
    assert_eq!(cache.len(), 1);
    assert_eq!(reports[0], reports[1]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bases.json");
    cache.save(&path).unwrap();
    let loaded = BasisCache::<f64>::load(&path).unwrap();
    assert_eq!(loaded.len(), 1);
}

#[test]
fn session_protocol_errors() {
    let mdp = bandit4();
    let side = |a: usize| MixturePolicy::pure(Policy::from_assignment(vec![vec![a]]));
    let cmp = |a, b| Comparison {
        phase: Phase::Benchmark,
        left: mopref_core::feedback::QuerySide::new(&mdp, side(a), Representation::Explicit),
        right: mopref_core::feedback::QuerySide::new(&mdp, side(b), Representation::Explicit),
    };
    let mut s: OracleSession64 = OracleSession::new(Some(1));
    assert_eq!(s.receive_answer("q1", Verdict::PreferLeft), Err(SessionError::NotPending));
    let id = s.post_query(cmp(1, 2)).unwrap().query_id.clone();
    assert_eq!(s.state(), &SessionState::AwaitingAnswer(id.clone()));
    assert!(matches!(s.post_query(cmp(1, 3)), Err(SessionError::AlreadyPending { .. })));
    assert!(matches!(s.receive_answer("q9", Verdict::PreferLeft), Err(SessionError::UnknownQuery { .. })));
    s.receive_answer(&id, Verdict::PreferLeft).unwrap();
    assert_eq!(s.state(), &SessionState::Ready);
    assert!(matches!(s.post_query(cmp(1, 3)), Err(SessionError::BudgetExhausted { budget: 1 })));

    let mut buf = Vec::new();
    s.write_transcript(&mut buf).unwrap();
    let back = read_transcript::<f64>(buf.as_slice()).unwrap();
    assert_eq!(back, s.transcript());
}

proptest! {
    #[test]
    fn verdicts_are_antisymmetric(
        w in prop::collection::vec(0.0f64..2.0, 3),
        l in prop::collection::vec(0.0f64..3.0, 3),
        r in prop::collection::vec(0.0f64..3.0, 3),
        eps in 0.0f64..0.5,
    ) {
        let mut u = user(&w, eps);
        let a = u.simulated_answer(&l, &r).unwrap();
        let b = u.simulated_answer(&r, &l).unwrap();
        prop_assert_eq!(a, b.swapped());
    }

    #[test]
    fn scaling_the_gap_moves_it_across_the_threshold(
        gap in -1.0f64..1.0,
        c in 0.01f64..10.0,
        eps in 0.01f64..0.5,
    ) {
        let mut u = user(&[1.0], eps);
        let scaled = u.simulated_answer(&[c * gap], &[0.0]).unwrap();
        let expected = if c * gap > eps {
            Verdict::PreferLeft
        } else if c * gap < -eps {
            Verdict::PreferRight
        } else {
            Verdict::Indistinguishable
        };
        prop_assert_eq!(scaled, expected);
    }
}

#[test]
fn exact_user_recovers_optimal_policy() {
    let mut rng = rng(45);
    let mut checked = 0;
    while checked < 20 {
        let mdp = random_small(&mut rng, 3, 3, 3, 3);
        let k = mdp.objectives();
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut values: Vec<f64> =
            enumerate_policies(&mdp, 1_000_000).unwrap().map(|p| dot(&vector_value(&mdp, &p), &w)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        if values.windows(2).any(|p| p[1] - p[0] < 1e-6) {
            continue;
        }
        checked += 1;
        let mut session = OracleSession::new(None);
        let mut u = user(&w, 1e-12);
        let report = run_elicitation(&mdp, &mut session, &mut u, &EngineConfig::default(), None).unwrap();
        let best = *values.last().unwrap();
        assert!((dot(&report.output_value, &w) - scalarized_plan(&mdp, &w).1).abs() <= 1e-12);
        assert!((dot(&report.output_value, &w) - best).abs() <= 1e-12);
    }
}
