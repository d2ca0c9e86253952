use serde::{Deserialize, Serialize};

use super::{MixturePolicy, Momdp, Policy, ValueVector};
use crate::Scalar;

/// `s_0, a_0, s_1, ..., a_{H-1}, s_H`, stored as `H + 1` states and `H` actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Self {
        debug_assert_eq!(states.len(), actions.len() + 1);
        Self { states, actions }
    }

    /// A trajectory of length zero sitting in `state`.
    pub fn start(state: usize) -> Self {
        Self { states: vec![state], actions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn last_state(&self) -> usize {
        *self.states.last().expect("trajectory has a start state")
    }

    /// Appends one transition.
    pub fn extended(&self, action: usize, next: usize) -> Self {
        let mut t = self.clone();
        t.actions.push(action);
        t.states.push(next);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory has {states} states for {actions} actions")]
    Shape { states: usize, actions: usize },
    #[error("step {step}: unknown state index {state}")]
    UnknownState { step: usize, state: usize },
    #[error("step {step}: action {action} is not available in state {state}")]
    Unavailable { step: usize, state: usize, action: usize },
}

/// Sum of rewards along the trajectory.
pub fn trajectory_return<T: Scalar>(
    mdp: &Momdp<T>,
    trajectory: &Trajectory,
) -> Result<ValueVector<T>, TrajectoryError> {
    if trajectory.states.len() != trajectory.actions.len() + 1 {
        return Err(TrajectoryError::Shape { states: trajectory.states.len(), actions: trajectory.actions.len() });
    }
    if let Some((step, &state)) = trajectory.states.iter().enumerate().find(|(_, &s)| s >= mdp.num_states()) {
        return Err(TrajectoryError::UnknownState { step, state });
    }
    let mut acc = ValueVector::zeros(mdp.objectives());
    for (step, (&s, &a)) in trajectory.states.iter().zip(&trajectory.actions).enumerate() {
        let o = mdp.outcome(s, a).ok_or(TrajectoryError::Unavailable { step, state: s, action: a })?;
        for (x, r) in acc.0.iter_mut().zip(&o.reward) {
            *x = *x + *r;
        }
    }
    Ok(acc)
}

/// Probability that running `policy` from the initial state produces `trajectory`.
///
/// Zero when the trajectory does not start at the initial state, has the wrong
/// length, takes an action the policy does not take, or uses a transition
/// outside the support.
pub fn trajectory_probability<T: Scalar>(mdp: &Momdp<T>, policy: &Policy, trajectory: &Trajectory) -> T {
    if trajectory.states.len() != trajectory.actions.len() + 1
        || trajectory.len() != policy.horizon()
        || trajectory.states[0] != mdp.initial_state()
    {
        return T::zero();
    }
    let mut prob = T::one();
    for (h, (&s, &a)) in trajectory.states.iter().zip(&trajectory.actions).enumerate() {
        if s >= mdp.num_states() || policy.action(h, s) != a {
            return T::zero();
        }
        let next = trajectory.states[h + 1];
        let Some(o) = mdp.outcome(s, a) else { return T::zero() };
        match o.next.iter().find(|&&(t, _)| t == next) {
            Some(&(_, p)) => prob = prob * p,
            None => return T::zero(),
        }
    }
    prob
}

/// Probability of `trajectory` under a mixture: the weighted sum over components.
pub fn mixture_trajectory_probability<T: Scalar>(
    mdp: &Momdp<T>,
    mixture: &MixturePolicy<T>,
    trajectory: &Trajectory,
) -> T {
    mixture.components().iter().map(|(w, p)| *w * trajectory_probability(mdp, p, trajectory)).sum()
}
