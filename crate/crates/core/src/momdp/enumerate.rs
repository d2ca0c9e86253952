//! Exhaustive enumeration of policies and trajectories, for brute-force checks.

use super::{trajectory_return, Momdp, Policy, Trajectory, ValueVector};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnumerationError {
    #[error("enumeration would produce more than {limit} items")]
    LimitExceeded { limit: u128 },
}

/// Number of time-indexed deterministic policies, or `None` on overflow.
pub fn policy_count<T: Scalar>(mdp: &Momdp<T>) -> Option<u128> {
    let mut count: u128 = 1;
    for _ in 0..mdp.horizon() {
        for s in 0..mdp.num_states() {
            count = count.checked_mul(mdp.available(s).len() as u128)?;
        }
    }
    Some(count)
}

/// Iterates over every time-indexed deterministic policy exactly once.
///
/// Order is lexicographic in the flattened `(h, s)` table with the last entry
/// varying fastest.
pub fn enumerate_policies<T: Scalar>(mdp: &Momdp<T>, limit: u128) -> Result<PolicyIter<'_, T>, EnumerationError> {
    match policy_count(mdp) {
        Some(c) if c <= limit => Ok(PolicyIter { mdp, digits: Some(vec![0; mdp.horizon() * mdp.num_states()]) }),
        _ => Err(EnumerationError::LimitExceeded { limit }),
    }
}

pub struct PolicyIter<'a, T> {
    mdp: &'a Momdp<T>,
    /// Per `(h, s)`, an index into `available(s)`. `None` once exhausted.
    digits: Option<Vec<usize>>,
}

impl<T: Scalar> Iterator for PolicyIter<'_, T> {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        let digits = self.digits.as_mut()?;
        let n = self.mdp.num_states();
        let assignment = digits
            .chunks(n)
            .map(|row| row.iter().enumerate().map(|(s, &d)| self.mdp.available(s)[d]).collect())
            .collect();
        let policy = Policy::from_assignment(assignment);

        let mut pos = digits.len();
        loop {
            if pos == 0 {
                self.digits = None;
                break;
            }
            pos -= 1;
            let radix = self.mdp.available(pos % n).len();
            digits[pos] += 1;
            if digits[pos] < radix {
                break;
            }
            digits[pos] = 0;
        }
        Some(policy)
    }
}

/// Every trajectory with positive probability under `policy`, with its
/// probability and return, in depth-first order by ascending successor.
pub fn enumerate_trajectories<T: Scalar>(
    mdp: &Momdp<T>,
    policy: &Policy,
    limit: usize,
) -> Result<Vec<(Trajectory, T, ValueVector<T>)>, EnumerationError> {
    let mut out = Vec::new();
    let mut stack = vec![(Trajectory::start(mdp.initial_state()), T::one())];
    while let Some((traj, prob)) = stack.pop() {
        let h = traj.len();
        if h == mdp.horizon() {
            if out.len() == limit {
                return Err(EnumerationError::LimitExceeded { limit: limit as u128 });
            }
            let ret = trajectory_return(mdp, &traj).expect("enumerated trajectory is valid");
            out.push((traj, prob, ret));
            continue;
        }
        let s = traj.last_state();
        let a = policy.action(h, s);
        let o = mdp.outcome(s, a).expect("policy action is available");
        for &(t, p) in o.next.iter().rev() {
            stack.push((traj.extended(a, t), prob * p));
        }
    }
    Ok(out)
}
