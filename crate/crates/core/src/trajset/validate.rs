use super::WeightedTrajectorySet;
use crate::linalg::norm_inf;
use crate::momdp::{
    mixture_trajectory_probability, trajectory_probability, trajectory_return, vector_value, Momdp, PolicyRef,
};
use crate::Scalar;

const SIMPLEX_TOL: f64 = 1e-12;
const VALUE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationFailure {
    NegativeWeight {
        index: usize,
        weight: f64,
    },
    WeightSum {
        sum: f64,
    },
    TooLarge {
        size: usize,
        max: usize,
    },
    OutsideSupport {
        index: usize,
    },
    /// The stored return disagrees with the instance, or the trajectory is invalid.
    BadReturn {
        index: usize,
    },
    Value {
        error: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks simplex weights, size `<= k + 1`, support under the policy, and the
/// exact value property `|sum w Phi - V|_inf <= 1e-8`.
pub fn validate_set<'a, T: Scalar>(
    mdp: &Momdp<T>,
    policy: impl Into<PolicyRef<'a, T>>,
    set: &WeightedTrajectorySet<T>,
) -> ValidationReport {
    let policy = policy.into();
    let mut failures = Vec::new();
    for (index, item) in set.items.iter().enumerate() {
        if !(item.weight >= T::zero()) {
            failures.push(ValidationFailure::NegativeWeight { index, weight: item.weight.to_f64_lossy() });
        }
    }
    let sum: T = set.items.iter().map(|i| i.weight).sum();
    if (sum - T::one()).abs() > T::tol(SIMPLEX_TOL) {
        failures.push(ValidationFailure::WeightSum { sum: sum.to_f64_lossy() });
    }
    let max = mdp.objectives() + 1;
    if set.len() > max {
        failures.push(ValidationFailure::TooLarge { size: set.len(), max });
    }
    for (index, item) in set.items.iter().enumerate() {
        let prob = match policy {
            PolicyRef::Pure(p) => trajectory_probability(mdp, p, &item.trajectory),
            PolicyRef::Mixture(m) => mixture_trajectory_probability(mdp, m, &item.trajectory),
        };
        if !(prob > T::zero()) {
            failures.push(ValidationFailure::OutsideSupport { index });
        }
        match trajectory_return(mdp, &item.trajectory) {
            Ok(r) if r == item.ret => {}
            _ => failures.push(ValidationFailure::BadReturn { index }),
        }
    }
    let value = vector_value(mdp, policy);
    let represented = set.weighted_return();
    let diff: Vec<T> = if represented.len() == value.len() {
        value.iter().zip(represented.iter()).map(|(&a, &b)| a - b).collect()
    } else {
        vec![T::infinity()]
    };
    let error = norm_inf(&diff);
    if !(error <= T::tol(VALUE_TOL)) {
        failures.push(ValidationFailure::Value { error: error.to_f64_lossy() });
    }
    ValidationReport { failures }
}
