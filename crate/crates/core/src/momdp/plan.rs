//! Backward dynamic programming: scalarized optimal planning and vector-valued evaluation.

use super::{MixturePolicy, Momdp, Policy, ValueVector};
use crate::linalg::dot;
use crate::Scalar;

/// Either a deterministic policy or a mixture of them.
#[derive(Debug, Clone, Copy)]
pub enum PolicyRef<'a, T> {
    Pure(&'a Policy),
    Mixture(&'a MixturePolicy<T>),
}

impl<'a, T> From<&'a Policy> for PolicyRef<'a, T> {
    fn from(p: &'a Policy) -> Self {
        PolicyRef::Pure(p)
    }
}

impl<'a, T> From<&'a MixturePolicy<T>> for PolicyRef<'a, T> {
    fn from(m: &'a MixturePolicy<T>) -> Self {
        PolicyRef::Mixture(m)
    }
}

/// Optimal deterministic policy for the scalar reward `<direction, R>` and its value.
///
/// Ties go to the lowest action index at every `(h, s)`. Negative direction
/// components are allowed.
pub fn scalarized_plan<T: Scalar>(mdp: &Momdp<T>, direction: &[T]) -> (Policy, T) {
    assert_eq!(direction.len(), mdp.objectives(), "direction has wrong dimension");
    let n = mdp.num_states();
    let horizon = mdp.horizon();
    let mut next = vec![T::zero(); n];
    let mut current = vec![T::zero(); n];
    let mut assignment = vec![vec![0usize; n]; horizon];
    for h in (0..horizon).rev() {
        for s in 0..n {
            let mut best: Option<(usize, T)> = None;
            for &a in mdp.available(s) {
                let o = mdp.outcome(s, a).expect("available pair has an outcome");
                let mut q = dot(&o.reward, direction);
                for &(t, p) in &o.next {
                    q = q + p * next[t];
                }
                match best {
                    Some((_, b)) if q <= b => {}
                    _ => best = Some((a, q)),
                }
            }
            let (a, q) = best.expect("every state has an available action");
            assignment[h][s] = a;
            current[s] = q;
        }
        std::mem::swap(&mut next, &mut current);
    }
    (Policy::from_assignment(assignment), next[mdp.initial_state()])
}

/// Exact expected return of a policy or mixture from the initial state.
///
/// A mixture's value is the weighted sum of its component values, in component order.
pub fn vector_value<'a, T: Scalar>(mdp: &Momdp<T>, policy: impl Into<PolicyRef<'a, T>>) -> ValueVector<T> {
    match policy.into() {
        PolicyRef::Pure(p) => tail_value_table(mdp, p).value(mdp.initial_state(), mdp.horizon()).clone(),
        PolicyRef::Mixture(m) => {
            let mut acc = ValueVector::zeros(mdp.objectives());
            for (w, p) in m.components() {
                let v = vector_value(mdp, p);
                for (a, x) in acc.0.iter_mut().zip(v.iter()) {
                    *a = *a + *w * *x;
                }
            }
            acc
        }
    }
}

/// `V(s, h)`: expected return of the last `h` steps of a policy started in `s`,
/// for every state and `h = 0..=H`.
///
/// With a time-indexed policy the remaining `h` steps are steps `H-h .. H-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailValueTable<T> {
    /// `table[h][s]`
    table: Vec<Vec<ValueVector<T>>>,
}

impl<T: Scalar> TailValueTable<T> {
    pub fn value(&self, state: usize, remaining: usize) -> &ValueVector<T> {
        &self.table[remaining][state]
    }

    pub fn horizon(&self) -> usize {
        self.table.len() - 1
    }
}

/// Fills the tail value table by induction on the remaining horizon.
pub fn tail_value_table<T: Scalar>(mdp: &Momdp<T>, policy: &Policy) -> TailValueTable<T> {
    let n = mdp.num_states();
    let k = mdp.objectives();
    let horizon = mdp.horizon();
    assert_eq!(policy.horizon(), horizon, "policy horizon does not match instance");
    let mut table = Vec::with_capacity(horizon + 1);
    table.push(vec![ValueVector::zeros(k); n]);
    for remaining in 1..=horizon {
        let step = horizon - remaining;
        let prev = &table[remaining - 1];
        let row: Vec<ValueVector<T>> = (0..n)
            .map(|s| {
                let a = policy.action(step, s);
                let o = mdp.outcome(s, a).expect("policy action is available");
                let mut acc = o.reward.clone();
                for &(t, p) in &o.next {
                    for (x, v) in acc.iter_mut().zip(prev[t].iter()) {
                        *x = *x + p * *v;
                    }
                }
                ValueVector(acc)
            })
            .collect();
        table.push(row);
    }
    TailValueTable { table }
}
