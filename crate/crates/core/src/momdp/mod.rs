//! Multi-objective finite-horizon MDPs, policies and their values.
//!
//! States and actions are addressed by index; names are only used at the
//! file boundary. Policies are time-indexed: `policy.action(h, s)` is the
//! action taken in state `s` at step `h`.

mod enumerate;
mod instance;
mod plan;
mod trajectory;

use std::ops::Deref;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg;
use crate::Scalar;

pub use enumerate::{enumerate_policies, enumerate_trajectories, policy_count, EnumerationError, PolicyIter};
pub use instance::{parse_and_validate, DoNothingRef, InstanceDocument, InstanceError, PolicyDocument};
pub use plan::{scalarized_plan, tail_value_table, vector_value, PolicyRef, TailValueTable};
pub use trajectory::{
    mixture_trajectory_probability, trajectory_probability, trajectory_return, Trajectory, TrajectoryError,
};

/// Successor distribution and reward of one available state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    /// `(next_state, probability)` with positive probabilities, ascending by state.
    pub next: Vec<(usize, T)>,
    pub reward: Vec<T>,
}

/// A validated multi-objective MDP with a designated do-nothing action.
#[derive(Debug, Clone)]
pub struct Momdp<T> {
    states: Vec<String>,
    actions: Vec<String>,
    available: Vec<Vec<usize>>,
    initial: usize,
    horizon: usize,
    objectives: usize,
    outcomes: Vec<Vec<Option<Outcome<T>>>>,
    do_nothing: (usize, usize),
    digest: String,
}

impl<T: Scalar> Momdp<T> {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of objectives `k`.
    pub fn objectives(&self) -> usize {
        self.objectives
    }

    pub fn initial_state(&self) -> usize {
        self.initial
    }

    /// The `(state, action)` pair of the zero-reward self loop.
    pub fn do_nothing(&self) -> (usize, usize) {
        self.do_nothing
    }

    /// Actions available in `state`, ascending.
    pub fn available(&self, state: usize) -> &[usize] {
        &self.available[state]
    }

    pub fn outcome(&self, state: usize, action: usize) -> Option<&Outcome<T>> {
        self.outcomes.get(state)?.get(action)?.as_ref()
    }

    pub fn state_name(&self, state: usize) -> &str {
        &self.states[state]
    }

    pub fn action_name(&self, action: usize) -> &str {
        &self.actions[action]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn state_names(&self) -> &[String] {
        &self.states
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    /// SHA-256 of the canonical instance document, hex encoded.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Upper bound `sqrt(k) * H` on the Euclidean norm of any policy value.
    pub fn value_norm_bound(&self) -> T {
        T::lit(self.objectives as f64).sqrt() * T::lit(self.horizon as f64)
    }
}

/// A deterministic time-indexed policy: `assignment[h][s]` is an action index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Policy {
    assignment: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy has {found} steps, instance horizon is {expected}")]
    Horizon { expected: usize, found: usize },
    #[error("policy step {step} covers {found} states, instance has {expected}")]
    States { step: usize, expected: usize, found: usize },
    #[error("policy step {step}: action {action} is not available in state {state}")]
    Unavailable { step: usize, state: usize, action: usize },
}

impl Policy {
    /// Wraps an assignment table without checking it against an instance.
    pub fn from_assignment(assignment: Vec<Vec<usize>>) -> Self {
        Self { assignment }
    }

    /// Same action per state at every step.
    pub fn stationary(per_state: Vec<usize>, horizon: usize) -> Self {
        Self { assignment: vec![per_state; horizon] }
    }

    /// The policy that takes the do-nothing action at its state and the lowest
    /// available action everywhere else.
    pub fn do_nothing<T: Scalar>(mdp: &Momdp<T>) -> Self {
        let (s0, a0) = mdp.do_nothing();
        let per_state = (0..mdp.num_states()).map(|s| if s == s0 { a0 } else { mdp.available(s)[0] }).collect();
        Self::stationary(per_state, mdp.horizon())
    }

    pub fn action(&self, step: usize, state: usize) -> usize {
        self.assignment[step][state]
    }

    pub fn horizon(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[Vec<usize>] {
        &self.assignment
    }

    pub fn validate<T: Scalar>(&self, mdp: &Momdp<T>) -> Result<(), PolicyError> {
        if self.assignment.len() != mdp.horizon() {
            return Err(PolicyError::Horizon { expected: mdp.horizon(), found: self.assignment.len() });
        }
        for (step, row) in self.assignment.iter().enumerate() {
            if row.len() != mdp.num_states() {
                return Err(PolicyError::States { step, expected: mdp.num_states(), found: row.len() });
            }
            for (state, &action) in row.iter().enumerate() {
                if !mdp.available(state).contains(&action) {
                    return Err(PolicyError::Unavailable { step, state, action });
                }
            }
        }
        Ok(())
    }

    /// Short stable identifier of the assignment table.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for row in &self.assignment {
            for &a in row {
                hasher.update((a as u64).to_le_bytes());
            }
            hasher.update(u64::MAX.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixtureError {
    #[error("mixture has no components")]
    Empty,
    #[error("mixture weight {index} is negative or not finite ({weight})")]
    BadWeight { index: usize, weight: f64 },
    #[error("mixture weights sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
}

/// A convex combination of deterministic policies: component `i` is executed
/// for the whole episode with probability `weight_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy<T> {
    components: Vec<(T, Policy)>,
}

impl<T: Scalar> MixturePolicy<T> {
    pub fn new(components: Vec<(T, Policy)>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::Empty);
        }
        for (index, (w, _)) in components.iter().enumerate() {
            if !w.is_finite() || *w < T::zero() {
                return Err(MixtureError::BadWeight { index, weight: w.to_f64_lossy() });
            }
        }
        let sum: T = components.iter().map(|(w, _)| *w).sum();
        if (sum - T::one()).abs() > T::tol(1e-12) {
            return Err(MixtureError::NotNormalized { sum: sum.to_f64_lossy() });
        }
        Ok(Self { components })
    }

    pub fn pure(policy: Policy) -> Self {
        Self { components: vec![(T::one(), policy)] }
    }

    /// `weight * policy + (1 - weight) * do_nothing`, with `weight` in `[0, 1]`.
    ///
    /// Components whose weight is exactly zero are omitted.
    pub fn scaled(mdp: &Momdp<T>, policy: Policy, weight: T) -> Self {
        assert!(weight >= T::zero() && weight <= T::one(), "mixture weight outside [0, 1]");
        let rest = T::one() - weight;
        let mut components = Vec::with_capacity(2);
        if weight > T::zero() {
            components.push((weight, policy));
        }
        if rest > T::zero() {
            components.push((rest, Policy::do_nothing(mdp)));
        }
        Self { components }
    }

    pub fn components(&self) -> &[(T, Policy)] {
        &self.components
    }

    /// Equal to the policy digest for a pure (single component) mixture.
    pub fn digest(&self) -> String {
        if let [(w, p)] = self.components.as_slice() {
            if *w == T::one() {
                return p.digest();
            }
        }
        let mut hasher = Sha256::new();
        for (w, p) in &self.components {
            hasher.update(w.to_f64_lossy().to_le_bytes());
            hasher.update(p.digest().as_bytes());
        }
        hex::encode(&hasher.finalize()[..12])
    }
}

/// Expected cumulative k-dimensional reward of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueVector<T>(pub Vec<T>);

impl<T: Scalar> ValueVector<T> {
    pub fn zeros(k: usize) -> Self {
        Self(vec![T::zero(); k])
    }

    /// Inner product with a preference or direction vector.
    pub fn dot(&self, weights: &[T]) -> T {
        linalg::dot(&self.0, weights)
    }

    pub fn norm(&self) -> T {
        linalg::norm2(&self.0)
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for ValueVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> From<Vec<T>> for ValueVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}
