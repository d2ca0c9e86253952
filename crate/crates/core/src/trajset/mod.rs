//! Weighted trajectory sets: at most `k + 1` support trajectories whose
//! weighted return equals a policy's value exactly.
//!
//! Two constructions are provided. [`expand_compress`] grows prefixes one
//! step at a time and compresses their expected completions with
//! [`c4_compress`]; [`flow_decompose`] decomposes the unit flow the policy
//! induces on the time-unrolled state graph into paths.

mod c4;
mod expand;
mod flow;
mod validate;

use serde::{Deserialize, Serialize};

use crate::momdp::{trajectory_return, MixturePolicy, Momdp, Trajectory, ValueVector};
use crate::{InstanceError, Scalar};

pub use c4::{c4_compress, C4Error, WEIGHT_FLOOR};
pub use expand::{expand_compress, expand_compress_stages, ExpansionStage};
pub use flow::{build_layer_graph, flow_decompose, LayerGraph, FLOW_ZERO};
pub use validate::{validate_set, ValidationFailure, ValidationReport};

/// One member of a [`WeightedTrajectorySet`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrajectory<T> {
    pub weight: T,
    pub trajectory: Trajectory,
    /// Cached `trajectory_return` of the trajectory.
    pub ret: ValueVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrajectorySet<T> {
    pub items: Vec<WeightedTrajectory<T>>,
    /// Digest of the represented policy or mixture.
    pub policy_digest: String,
}

impl<T: Scalar> WeightedTrajectorySet<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `sum_i w_i * Phi(tau_i)`.
    pub fn weighted_return(&self) -> ValueVector<T> {
        let k = self.items.first().map_or(0, |i| i.ret.len());
        let mut acc = ValueVector::zeros(k);
        for item in &self.items {
            for (a, r) in acc.0.iter_mut().zip(item.ret.iter()) {
                *a = *a + item.weight * *r;
            }
        }
        acc
    }

    pub fn to_document(&self, mdp: &Momdp<T>) -> TrajectorySetDocument {
        let items = self
            .items
            .iter()
            .map(|item| {
                let t = &item.trajectory;
                let mut steps: Vec<StepDocument> = t
                    .actions
                    .iter()
                    .zip(&t.states)
                    .map(|(&a, &s)| StepDocument {
                        state: mdp.state_name(s).to_string(),
                        action: Some(mdp.action_name(a).to_string()),
                    })
                    .collect();
                steps.push(StepDocument { state: mdp.state_name(t.last_state()).to_string(), action: None });
                ItemDocument {
                    weight: item.weight.to_f64_lossy(),
                    steps,
                    r#return: item.ret.iter().map(|x| x.to_f64_lossy()).collect(),
                }
            })
            .collect();
        TrajectorySetDocument {
            policy_digest: self.policy_digest.clone(),
            items,
            value: self.weighted_return().iter().map(|x| x.to_f64_lossy()).collect(),
        }
    }

    /// Resolves a document against `mdp`; returns are recomputed from the instance.
    pub fn from_document(mdp: &Momdp<T>, doc: &TrajectorySetDocument) -> Result<Self, InstanceError> {
        let mut items = Vec::with_capacity(doc.items.len());
        for (i, item) in doc.items.iter().enumerate() {
            let field = format!("items[{i}].steps");
            let mut states = Vec::new();
            let mut actions = Vec::new();
            for (j, step) in item.steps.iter().enumerate() {
                let s = mdp
                    .state_index(&step.state)
                    .ok_or_else(|| InstanceError::UnknownState { field: field.clone(), name: step.state.clone() })?;
                states.push(s);
                match (&step.action, j + 1 == item.steps.len()) {
                    (Some(a), false) => actions.push(
                        mdp.action_index(a)
                            .ok_or_else(|| InstanceError::UnknownAction { field: field.clone(), name: a.clone() })?,
                    ),
                    (None, true) => {}
                    _ => {
                        return Err(InstanceError::Malformed(format!(
                            "{field}: every step but the terminal one needs an action"
                        )))
                    }
                }
            }
            let trajectory = Trajectory::new(states, actions);
            let ret =
                trajectory_return(mdp, &trajectory).map_err(|e| InstanceError::Malformed(format!("{field}: {e}")))?;
            items.push(WeightedTrajectory { weight: T::lit(item.weight), trajectory, ret });
        }
        Ok(Self { items, policy_digest: doc.policy_digest.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDocument {
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDocument {
    pub weight: f64,
    pub steps: Vec<StepDocument>,
    pub r#return: Vec<f64>,
}

/// On-disk / wire form of a weighted trajectory set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySetDocument {
    pub policy_digest: String,
    pub items: Vec<ItemDocument>,
    pub value: Vec<f64>,
}

/// Represents a mixture by representing each component, scaling by the
/// component weight, and compressing the union back to at most `k + 1` items.
pub fn represent_mixture<T: Scalar>(mdp: &Momdp<T>, mixture: &MixturePolicy<T>) -> WeightedTrajectorySet<T> {
    if let [(w, policy)] = mixture.components() {
        if *w == T::one() {
            return expand_compress(mdp, policy);
        }
    }
    let mut union = Vec::new();
    for (w, policy) in mixture.components() {
        if *w <= T::zero() {
            continue;
        }
        for item in expand_compress(mdp, policy).items {
            union.push(WeightedTrajectory { weight: *w * item.weight, ..item });
        }
    }
    let points: Vec<Vec<T>> = union.iter().map(|i| i.ret.0.clone()).collect();
    let weights: Vec<T> = union.iter().map(|i| i.weight).collect();
    let (kept, new_weights) = c4_compress(&points, &weights).expect("mixture weights form a simplex");
    let items = kept
        .into_iter()
        .zip(new_weights)
        .map(|(i, weight)| WeightedTrajectory { weight, ..union[i].clone() })
        .collect();
    WeightedTrajectorySet { items, policy_digest: mixture.digest() }
}
