use super::{c4_compress, WeightedTrajectory, WeightedTrajectorySet};
use crate::momdp::{tail_value_table, Momdp, Policy, Trajectory, ValueVector};
use crate::Scalar;

/// The compressed prefix set after `t` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionStage<T> {
    pub prefixes: Vec<Trajectory>,
    pub weights: Vec<T>,
    /// Return accumulated by each prefix so far.
    pub returns: Vec<ValueVector<T>>,
    /// Expected full-horizon return given each prefix, `Phi(tau) + V(s_t, H - t)`.
    pub expected: Vec<ValueVector<T>>,
}

/// Runs the expand-and-compress construction and returns every stage
/// `Q^(0) ..= Q^(H)`. Each stage satisfies `sum beta * J = V^pi` and holds at
/// most `k + 1` prefixes.
pub fn expand_compress_stages<T: Scalar>(mdp: &Momdp<T>, policy: &Policy) -> Vec<ExpansionStage<T>> {
    let horizon = mdp.horizon();
    let tail = tail_value_table(mdp, policy);
    let s0 = mdp.initial_state();
    let mut stages = Vec::with_capacity(horizon + 1);
    stages.push(ExpansionStage {
        prefixes: vec![Trajectory::start(s0)],
        weights: vec![T::one()],
        returns: vec![ValueVector::zeros(mdp.objectives())],
        expected: vec![tail.value(s0, horizon).clone()],
    });

    for t in 0..horizon {
        let prev = stages.last().expect("stage zero exists");
        let mut prefixes = Vec::new();
        let mut weights = Vec::new();
        let mut returns = Vec::new();
        let mut expected = Vec::new();
        for ((prefix, &beta), phi) in prev.prefixes.iter().zip(&prev.weights).zip(&prev.returns) {
            let s = prefix.last_state();
            let a = policy.action(t, s);
            let o = mdp.outcome(s, a).expect("policy action is available");
            let phi_next: Vec<T> = phi.iter().zip(&o.reward).map(|(&x, &r)| x + r).collect();
            for &(next, p) in &o.next {
                let rest = tail.value(next, horizon - t - 1);
                let j: Vec<T> = phi_next.iter().zip(rest.iter()).map(|(&x, &v)| x + v).collect();
                prefixes.push(prefix.extended(a, next));
                weights.push(beta * p);
                returns.push(ValueVector(phi_next.clone()));
                expected.push(ValueVector(j));
            }
        }
        let points: Vec<Vec<T>> = expected.iter().map(|j| j.0.clone()).collect();
        let (kept, new_weights) = c4_compress(&points, &weights).expect("expanded weights form a simplex");
        stages.push(ExpansionStage {
            prefixes: kept.iter().map(|&i| prefixes[i].clone()).collect(),
            weights: new_weights,
            returns: kept.iter().map(|&i| returns[i].clone()).collect(),
            expected: kept.iter().map(|&i| expected[i].clone()).collect(),
        });
    }
    stages
}

/// Weighted trajectory set of at most `k + 1` full-length trajectories whose
/// weighted return equals the policy value.
pub fn expand_compress<T: Scalar>(mdp: &Momdp<T>, policy: &Policy) -> WeightedTrajectorySet<T> {
    let last = expand_compress_stages(mdp, policy).pop().expect("at least one stage");
    let items = last
        .prefixes
        .into_iter()
        .zip(last.weights)
        .zip(last.returns)
        .map(|((trajectory, weight), ret)| WeightedTrajectory { weight, trajectory, ret })
        .collect();
    WeightedTrajectorySet { items, policy_digest: policy.digest() }
}
