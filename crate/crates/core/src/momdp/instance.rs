//! JSON instance and policy documents.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Momdp, Outcome, Policy, PolicyError};
use crate::Scalar;

const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoNothingRef {
    pub state: String,
    pub action: String,
}

/// On-disk form of an instance. Maps are ordered so serialization is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub k: usize,
    pub horizon: usize,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub initial_state: String,
    pub do_nothing: DoNothingRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available_actions: Option<BTreeMap<String, Vec<String>>>,
    pub transitions: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    pub rewards: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InstanceError {
    #[error("malformed instance document: {0}")]
    Malformed(String),
    #[error("{field}: must be at least 1")]
    NonPositive { field: &'static str },
    #[error("{field}: duplicate name {name:?}")]
    Duplicate { field: &'static str, name: String },
    #[error("{field}: unknown state {name:?}")]
    UnknownState { field: String, name: String },
    #[error("{field}: unknown action {name:?}")]
    UnknownAction { field: String, name: String },
    #[error("available_actions.{state}: no actions available")]
    NoActions { state: String },
    #[error("{field}: missing entry for available action")]
    Missing { field: String },
    #[error("{field}: action is not available in this state")]
    NotAvailable { field: String },
    #[error("{field}: transition mass must be a non-negative finite probability, got {value}")]
    NegativeProbability { field: String, value: f64 },
    #[error("{field}: transition mass sums to {sum}, expected 1")]
    TransitionMass { field: String, sum: f64 },
    #[error("{field}: expected {expected} reward components, found {found}")]
    RewardLength { field: String, expected: usize, found: usize },
    #[error("{field}: reward range violated, component {index} is {value} (must lie in [0, 1])")]
    RewardRange { field: String, index: usize, value: f64 },
    #[error("do_nothing: {0}")]
    DoNothing(String),
}

/// Parses a JSON instance and checks every structural constraint.
pub fn parse_and_validate<T: Scalar>(document: &str) -> Result<Momdp<T>, InstanceError> {
    let doc: InstanceDocument = serde_json::from_str(document).map_err(|e| InstanceError::Malformed(e.to_string()))?;
    Momdp::from_document(&doc)
}

fn index_names<'a>(names: &'a [String], field: &'static str) -> Result<HashMap<&'a str, usize>, InstanceError> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.as_str(), i).is_some() {
            return Err(InstanceError::Duplicate { field, name: n.clone() });
        }
    }
    Ok(map)
}

impl<T: Scalar> Momdp<T> {
    pub fn from_document(doc: &InstanceDocument) -> Result<Self, InstanceError> {
        if doc.k == 0 {
            return Err(InstanceError::NonPositive { field: "k" });
        }
        if doc.horizon == 0 {
            return Err(InstanceError::NonPositive { field: "horizon" });
        }
        if doc.states.is_empty() {
            return Err(InstanceError::NonPositive { field: "states" });
        }
        if doc.actions.is_empty() {
            return Err(InstanceError::NonPositive { field: "actions" });
        }
        let state_ix = index_names(&doc.states, "states")?;
        let action_ix = index_names(&doc.actions, "actions")?;
        let lookup_state = |field: String, name: &str| {
            state_ix.get(name).copied().ok_or_else(|| InstanceError::UnknownState { field, name: name.to_string() })
        };
        let lookup_action = |field: String, name: &str| {
            action_ix.get(name).copied().ok_or_else(|| InstanceError::UnknownAction { field, name: name.to_string() })
        };

        let initial = lookup_state("initial_state".into(), &doc.initial_state)?;
        let s0 = lookup_state("do_nothing.state".into(), &doc.do_nothing.state)?;
        let a0 = lookup_action("do_nothing.action".into(), &doc.do_nothing.action)?;
        if s0 != initial {
            return Err(InstanceError::DoNothing(format!(
                "state {:?} must be the initial state {:?}",
                doc.do_nothing.state, doc.initial_state
            )));
        }

        let n = doc.states.len();
        let m = doc.actions.len();
        let mut available = vec![Vec::new(); n];
        match &doc.available_actions {
            Some(map) => {
                for (state, acts) in map {
                    let s = lookup_state(format!("available_actions.{state}"), state)?;
                    for a in acts {
                        let ai = lookup_action(format!("available_actions.{state}"), a)?;
                        if !available[s].contains(&ai) {
                            available[s].push(ai);
                        }
                    }
                }
                for list in &mut available {
                    list.sort_unstable();
                }
            }
            None => {
                for (s, list) in available.iter_mut().enumerate() {
                    *list = (0..m).filter(|&a| a != a0 || s == s0).collect();
                }
            }
        }
        for (s, list) in available.iter().enumerate() {
            if list.is_empty() {
                return Err(InstanceError::NoActions { state: doc.states[s].clone() });
            }
            if s != s0 && list.contains(&a0) {
                return Err(InstanceError::DoNothing(format!(
                    "action {:?} is available in state {:?}; it may only be available in {:?}",
                    doc.do_nothing.action, doc.states[s], doc.do_nothing.state
                )));
            }
        }
        if !available[s0].contains(&a0) {
            return Err(InstanceError::DoNothing(format!(
                "action {:?} is not available in state {:?}",
                doc.do_nothing.action, doc.do_nothing.state
            )));
        }

        // Every referenced pair must be available; every available pair must be described.
        for (state, row) in &doc.transitions {
            let s = lookup_state(format!("transitions.{state}"), state)?;
            for action in row.keys() {
                let a = lookup_action(format!("transitions.{state}"), action)?;
                if !available[s].contains(&a) {
                    return Err(InstanceError::NotAvailable { field: format!("transitions.{state}.{action}") });
                }
            }
        }
        for (state, row) in &doc.rewards {
            let s = lookup_state(format!("rewards.{state}"), state)?;
            for action in row.keys() {
                let a = lookup_action(format!("rewards.{state}"), action)?;
                if !available[s].contains(&a) {
                    return Err(InstanceError::NotAvailable { field: format!("rewards.{state}.{action}") });
                }
            }
        }

        let mut outcomes: Vec<Vec<Option<Outcome<T>>>> = vec![vec![None; m]; n];
        for (s, acts) in available.iter().enumerate() {
            let sname = &doc.states[s];
            for &a in acts {
                let aname = &doc.actions[a];
                let field = format!("transitions.{sname}.{aname}");
                let row = doc
                    .transitions
                    .get(sname)
                    .and_then(|r| r.get(aname))
                    .ok_or_else(|| InstanceError::Missing { field: field.clone() })?;
                let mut next = Vec::with_capacity(row.len());
                let mut sum = 0.0;
                for (target, &p) in row {
                    let t = lookup_state(field.clone(), target)?;
                    if !p.is_finite() || p < 0.0 {
                        return Err(InstanceError::NegativeProbability {
                            field: format!("{field}.{target}"),
                            value: p,
                        });
                    }
                    sum += p;
                    if p > 0.0 {
                        next.push((t, T::lit(p)));
                    }
                }
                if (sum - 1.0).abs() > MASS_TOL {
                    return Err(InstanceError::TransitionMass { field, sum });
                }
                next.sort_by_key(|&(t, _)| t);

                let rfield = format!("rewards.{sname}.{aname}");
                let reward = doc
                    .rewards
                    .get(sname)
                    .and_then(|r| r.get(aname))
                    .ok_or_else(|| InstanceError::Missing { field: rfield.clone() })?;
                if reward.len() != doc.k {
                    return Err(InstanceError::RewardLength { field: rfield, expected: doc.k, found: reward.len() });
                }
                for (index, &value) in reward.iter().enumerate() {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(InstanceError::RewardRange { field: rfield, index, value });
                    }
                }
                outcomes[s][a] = Some(Outcome { next, reward: reward.iter().map(|&r| T::lit(r)).collect() });
            }
        }

        let noop = outcomes[s0][a0].as_ref().expect("do-nothing pair is available");
        if noop.next.len() != 1 || noop.next[0].0 != s0 {
            return Err(InstanceError::DoNothing("transition must put all mass on its own state".into()));
        }
        if noop.reward.iter().any(|r| *r != T::zero()) {
            return Err(InstanceError::DoNothing("reward must be the zero vector".into()));
        }

        let mut mdp = Self {
            states: doc.states.clone(),
            actions: doc.actions.clone(),
            available,
            initial,
            horizon: doc.horizon,
            objectives: doc.k,
            outcomes,
            do_nothing: (s0, a0),
            digest: String::new(),
        };
        // Hash the normalized form so equivalent documents share a digest.
        let canonical = serde_json::to_vec(&mdp.to_document()).expect("instance document serializes");
        mdp.digest = hex::encode(Sha256::digest(&canonical));
        Ok(mdp)
    }

    /// Renders the instance back into its document form.
    pub fn to_document(&self) -> InstanceDocument {
        let mut transitions = BTreeMap::new();
        let mut rewards = BTreeMap::new();
        let mut avail = BTreeMap::new();
        for s in 0..self.num_states() {
            let sname = self.states[s].clone();
            let mut trow = BTreeMap::new();
            let mut rrow = BTreeMap::new();
            for &a in self.available(s) {
                let o = self.outcome(s, a).expect("available pair has an outcome");
                let aname = self.actions[a].clone();
                trow.insert(
                    aname.clone(),
                    o.next.iter().map(|&(t, p)| (self.states[t].clone(), p.to_f64_lossy())).collect(),
                );
                rrow.insert(aname, o.reward.iter().map(|r| r.to_f64_lossy()).collect());
            }
            transitions.insert(sname.clone(), trow);
            rewards.insert(sname.clone(), rrow);
            avail.insert(sname, self.available(s).iter().map(|&a| self.actions[a].clone()).collect());
        }
        InstanceDocument {
            k: self.objectives,
            horizon: self.horizon,
            states: self.states.clone(),
            actions: self.actions.clone(),
            initial_state: self.states[self.initial].clone(),
            do_nothing: DoNothingRef {
                state: self.states[self.do_nothing.0].clone(),
                action: self.actions[self.do_nothing.1].clone(),
            },
            available_actions: Some(avail),
            transitions,
            rewards,
        }
    }
}

/// On-disk policy: one `state -> action` map per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    pub horizon: usize,
    pub steps: Vec<BTreeMap<String, String>>,
}

impl PolicyDocument {
    pub fn from_policy<T: Scalar>(mdp: &Momdp<T>, policy: &Policy) -> Self {
        let steps = policy
            .assignment()
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(s, &a)| (mdp.state_name(s).to_string(), mdp.action_name(a).to_string()))
                    .collect()
            })
            .collect();
        Self { horizon: policy.horizon(), steps }
    }

    /// Resolves names against `mdp`. States missing from a step fall back to
    /// their lowest available action.
    pub fn to_policy<T: Scalar>(&self, mdp: &Momdp<T>) -> Result<Policy, InstanceError> {
        if self.horizon != mdp.horizon() || self.steps.len() != mdp.horizon() {
            return Err(InstanceError::Malformed(format!(
                "policy horizon {} (with {} steps) does not match instance horizon {}",
                self.horizon,
                self.steps.len(),
                mdp.horizon()
            )));
        }
        let mut assignment = Vec::with_capacity(self.steps.len());
        for (h, step) in self.steps.iter().enumerate() {
            let mut row: Vec<usize> = (0..mdp.num_states()).map(|s| mdp.available(s)[0]).collect();
            for (state, action) in step {
                let field = format!("steps[{h}]");
                let s = mdp
                    .state_index(state)
                    .ok_or_else(|| InstanceError::UnknownState { field: field.clone(), name: state.clone() })?;
                let a = mdp
                    .action_index(action)
                    .ok_or_else(|| InstanceError::UnknownAction { field, name: action.clone() })?;
                row[s] = a;
            }
            assignment.push(row);
        }
        let policy = Policy::from_assignment(assignment);
        policy.validate(mdp).map_err(|e: PolicyError| InstanceError::Malformed(e.to_string()))?;
        Ok(policy)
    }
}
