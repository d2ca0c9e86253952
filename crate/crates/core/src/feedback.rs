//! Comparison queries, simulated users, and the query/answer session protocol.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::momdp::{vector_value, MixturePolicy, Momdp, ValueVector};
use crate::trajset::{represent_mixture, WeightedTrajectorySet};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[serde(rename = "left")]
    PreferLeft,
    #[serde(rename = "right")]
    PreferRight,
    Indistinguishable,
}

impl Verdict {
    /// The verdict for the same comparison with sides exchanged.
    pub fn swapped(self) -> Self {
        match self {
            Verdict::PreferLeft => Verdict::PreferRight,
            Verdict::PreferRight => Verdict::PreferLeft,
            Verdict::Indistinguishable => Verdict::Indistinguishable,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(Verdict::PreferLeft),
            "right" => Some(Verdict::PreferRight),
            "indistinguishable" => Some(Verdict::Indistinguishable),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::PreferLeft => "left",
            Verdict::PreferRight => "right",
            Verdict::Indistinguishable => "indistinguishable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Benchmark,
    Ratio,
    Precision,
}

/// How policies are shown to whoever answers a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Explicit,
    #[serde(alias = "trajset")]
    TrajectorySet,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UserError {
    #[error("preference component {index} is negative or not finite")]
    BadPreference { index: usize },
    #[error("precision must be a non-negative finite number")]
    BadPrecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("value vectors have dimension {found}, preference has {expected}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub found: usize,
}

/// A user with a hidden linear preference who answers with precision `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUser<T> {
    preference: Vec<T>,
    precision: T,
    /// Known bound `C_w` on the preference norm, if any. Informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    norm_bound: Option<T>,
    #[serde(default)]
    queries_answered: usize,
}

impl<T: Scalar> SimulatedUser<T> {
    /// `precision = 0` gives an exact user who only reports true ties as indistinguishable.
    pub fn new(preference: Vec<T>, precision: T) -> Result<Self, UserError> {
        if let Some(index) = preference.iter().position(|w| !w.is_finite() || *w < T::zero()) {
            return Err(UserError::BadPreference { index });
        }
        if !precision.is_finite() || precision < T::zero() {
            return Err(UserError::BadPrecision);
        }
        Ok(Self { preference, precision, norm_bound: None, queries_answered: 0 })
    }

    pub fn with_norm_bound(mut self, bound: T) -> Self {
        self.norm_bound = Some(bound);
        self
    }

    pub fn with_precision(&self, precision: T) -> Result<Self, UserError> {
        let mut u = Self::new(self.preference.clone(), precision)?;
        u.norm_bound = self.norm_bound;
        Ok(u)
    }

    pub fn preference(&self) -> &[T] {
        &self.preference
    }

    pub fn precision(&self) -> T {
        self.precision
    }

    pub fn norm_bound(&self) -> Option<T> {
        self.norm_bound
    }

    pub fn queries_answered(&self) -> usize {
        self.queries_answered
    }

    pub fn personalized_value(&self, value: &[T]) -> T {
        dot(&self.preference, value)
    }

    /// PreferLeft iff `<w, V_L - V_R> > eps`, PreferRight iff `< -eps`.
    pub fn simulated_answer(&mut self, left: &[T], right: &[T]) -> Result<Verdict, DimensionMismatch> {
        let k = self.preference.len();
        for v in [left, right] {
            if v.len() != k {
                return Err(DimensionMismatch { expected: k, found: v.len() });
            }
        }
        self.queries_answered += 1;
        let gap: T =
            self.preference.iter().zip(left.iter().zip(right)).fold(T::zero(), |acc, (&w, (&l, &r))| acc + w * (l - r));
        Ok(if gap > self.precision {
            Verdict::PreferLeft
        } else if gap < -self.precision {
            Verdict::PreferRight
        } else {
            Verdict::Indistinguishable
        })
    }
}

/// One side of a comparison: the policy, its exact value, and (for the
/// trajectory-set representation) the set shown in its place.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySide<T> {
    pub policy: MixturePolicy<T>,
    pub value: ValueVector<T>,
    pub trajectories: Option<WeightedTrajectorySet<T>>,
}

impl<T: Scalar> QuerySide<T> {
    pub fn new(mdp: &Momdp<T>, policy: MixturePolicy<T>, representation: Representation) -> Self {
        let value = vector_value(mdp, &policy);
        let trajectories = match representation {
            Representation::Explicit => None,
            Representation::TrajectorySet => Some(represent_mixture(mdp, &policy)),
        };
        Self { policy, value, trajectories }
    }

    /// The value an observer of this side can infer: the weighted return of
    /// the trajectory set when one is shown, the exact value otherwise.
    pub fn presented_value(&self) -> ValueVector<T> {
        match &self.trajectories {
            Some(set) => set.weighted_return(),
            None => self.value.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison<T> {
    pub phase: Phase,
    pub left: QuerySide<T>,
    pub right: QuerySide<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonQuery<T> {
    pub query_id: String,
    pub comparison: Comparison<T>,
}

/// Something that can answer a posted query synchronously.
pub trait Responder<T> {
    fn respond(&mut self, query: &ComparisonQuery<T>) -> Result<Verdict, OracleError>;
}

impl<T: Scalar> Responder<T> for SimulatedUser<T> {
    fn respond(&mut self, query: &ComparisonQuery<T>) -> Result<Verdict, OracleError> {
        let c = &query.comparison;
        Ok(self.simulated_answer(&c.left.value, &c.right.value)?)
    }
}

/// Replays a fixed verdict sequence.
#[derive(Debug, Clone, Default)]
pub struct ScriptedResponder {
    verdicts: VecDeque<Verdict>,
}

impl ScriptedResponder {
    pub fn new(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        Self { verdicts: verdicts.into_iter().collect() }
    }

    pub fn remaining(&self) -> usize {
        self.verdicts.len()
    }
}

impl<T> Responder<T> for ScriptedResponder {
    fn respond(&mut self, _query: &ComparisonQuery<T>) -> Result<Verdict, OracleError> {
        self.verdicts.pop_front().ok_or(OracleError::ScriptExhausted)
    }
}

/// Replays recorded verdicts, then parks on the first unanswered query.
///
/// Running a deterministic elicitation against this responder reconstructs
/// a session from its transcript and yields the next query to ask.
#[derive(Debug, Clone)]
pub struct ReplayResponder<T> {
    verdicts: VecDeque<Verdict>,
    parked: Option<ComparisonQuery<T>>,
}

impl<T: Clone> ReplayResponder<T> {
    pub fn new(verdicts: impl IntoIterator<Item = Verdict>) -> Self {
        Self { verdicts: verdicts.into_iter().collect(), parked: None }
    }

    /// The query that could not be answered from the recording, if any.
    pub fn parked(&self) -> Option<&ComparisonQuery<T>> {
        self.parked.as_ref()
    }

    pub fn into_parked(self) -> Option<ComparisonQuery<T>> {
        self.parked
    }
}

impl<T: Clone> Responder<T> for ReplayResponder<T> {
    fn respond(&mut self, query: &ComparisonQuery<T>) -> Result<Verdict, OracleError> {
        match self.verdicts.pop_front() {
            Some(v) => Ok(v),
            None => {
                self.parked = Some(query.clone());
                Err(OracleError::Awaiting { query_id: query.query_id.clone() })
            }
        }
    }
}

/// Builds the two sides of each comparison and routes it through a session.
pub struct Oracle<'a, T, R> {
    mdp: &'a Momdp<T>,
    session: &'a mut OracleSession<T>,
    responder: &'a mut R,
    representation: Representation,
}

impl<'a, T: Scalar, R: Responder<T>> Oracle<'a, T, R> {
    pub fn new(
        mdp: &'a Momdp<T>,
        session: &'a mut OracleSession<T>,
        responder: &'a mut R,
        representation: Representation,
    ) -> Self {
        Self { mdp, session, responder, representation }
    }

    pub fn mdp(&self) -> &'a Momdp<T> {
        self.mdp
    }

    pub fn session(&self) -> &OracleSession<T> {
        self.session
    }

    pub fn compare(
        &mut self,
        phase: Phase,
        left: MixturePolicy<T>,
        right: MixturePolicy<T>,
    ) -> Result<Verdict, OracleError> {
        let comparison = Comparison {
            phase,
            left: QuerySide::new(self.mdp, left, self.representation),
            right: QuerySide::new(self.mdp, right, self.representation),
        };
        self.session.ask(comparison, self.responder)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("query {pending} is still awaiting an answer")]
    AlreadyPending { pending: String },
    #[error("query budget of {budget} exhausted")]
    BudgetExhausted { budget: usize },
    #[error("answer for unknown query {got} (pending: {expected})")]
    UnknownQuery { expected: String, got: String },
    #[error("no query is awaiting an answer")]
    NotPending,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("scripted verdicts exhausted")]
    ScriptExhausted,
    /// Raised by [`ReplayResponder`] once its recorded verdicts run out.
    #[error("query {query_id} is awaiting an answer")]
    Awaiting { query_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "query_id", rename_all = "snake_case")]
pub enum SessionState {
    Ready,
    AwaitingAnswer(String),
}

/// One answered comparison, as written to the JSON-lines transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord<T> {
    pub query_id: String,
    pub phase: Phase,
    pub left_value: ValueVector<T>,
    pub right_value: ValueVector<T>,
    pub verdict: Verdict,
    /// Milliseconds since the Unix epoch at the time the answer was received.
    pub timestamp: u64,
}

/// Query/answer exchange with at most one outstanding query.
#[derive(Debug, Clone)]
pub struct OracleSession<T> {
    state: SessionState,
    pending: Option<ComparisonQuery<T>>,
    transcript: Vec<TranscriptRecord<T>>,
    budget: Option<usize>,
    issued: usize,
}

impl<T: Scalar> Default for OracleSession<T> {
    fn default() -> Self {
        Self::new(None)
    }
}

impl<T: Scalar> OracleSession<T> {
    pub fn new(budget: Option<usize>) -> Self {
        Self { state: SessionState::Ready, pending: None, transcript: Vec::new(), budget, issued: 0 }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn pending(&self) -> Option<&ComparisonQuery<T>> {
        self.pending.as_ref()
    }

    pub fn transcript(&self) -> &[TranscriptRecord<T>] {
        &self.transcript
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    /// Issues a query with a fresh id (`q1`, `q2`, ...) and waits for its answer.
    pub fn post_query(&mut self, comparison: Comparison<T>) -> Result<&ComparisonQuery<T>, SessionError> {
        if let SessionState::AwaitingAnswer(id) = &self.state {
            return Err(SessionError::AlreadyPending { pending: id.clone() });
        }
        if let Some(budget) = self.budget {
            if self.transcript.len() >= budget {
                return Err(SessionError::BudgetExhausted { budget });
            }
        }
        self.issued += 1;
        let query_id = format!("q{}", self.issued);
        self.state = SessionState::AwaitingAnswer(query_id.clone());
        Ok(self.pending.insert(ComparisonQuery { query_id, comparison }))
    }

    /// Records the answer to the pending query and returns that query.
    pub fn receive_answer(&mut self, query_id: &str, verdict: Verdict) -> Result<ComparisonQuery<T>, SessionError> {
        let expected = match &self.state {
            SessionState::Ready => return Err(SessionError::NotPending),
            SessionState::AwaitingAnswer(id) => id,
        };
        if expected != query_id {
            return Err(SessionError::UnknownQuery { expected: expected.clone(), got: query_id.to_string() });
        }
        let query = self.pending.take().expect("awaiting state has a pending query");
        self.transcript.push(TranscriptRecord {
            query_id: query.query_id.clone(),
            phase: query.comparison.phase,
            left_value: query.comparison.left.value.clone(),
            right_value: query.comparison.right.value.clone(),
            verdict,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
        });
        self.state = SessionState::Ready;
        Ok(query)
    }

    /// Posts a comparison, asks `responder`, and records the answer.
    pub fn ask(
        &mut self,
        comparison: Comparison<T>,
        responder: &mut impl Responder<T>,
    ) -> Result<Verdict, OracleError> {
        let query = self.post_query(comparison)?;
        let verdict = responder.respond(query)?;
        let id = query.query_id.clone();
        self.receive_answer(&id, verdict)?;
        Ok(verdict)
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.transcript.iter().map(|r| r.verdict).collect()
    }
}

impl<T: Scalar + Serialize> OracleSession<T> {
    pub fn write_transcript(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in &self.transcript {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads a JSON-lines transcript.
pub fn read_transcript<T: Scalar + for<'de> Deserialize<'de>>(
    input: impl BufRead,
) -> Result<Vec<TranscriptRecord<T>>, std::io::Error> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule_examples() {
        let mut u = SimulatedUser::new(vec![1.0, 0.0], 0.1).unwrap();
        assert_eq!(u.simulated_answer(&[1.0, 0.0], &[0.95, 5.0]).unwrap(), Verdict::Indistinguishable);
        let mut u = SimulatedUser::new(vec![1.0, 1.0], 0.01).unwrap();
        assert_eq!(u.simulated_answer(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), Verdict::PreferLeft);
        let mut u = SimulatedUser::new(vec![2.0, 1.0], 0.1).unwrap();
        assert_eq!(u.simulated_answer(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), Verdict::PreferRight);
        assert_eq!(u.queries_answered(), 1);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut u = SimulatedUser::new(vec![1.0, 1.0], 0.1).unwrap();
        assert_eq!(u.simulated_answer(&[1.0], &[0.0, 0.0]), Err(DimensionMismatch { expected: 2, found: 1 }));
        assert_eq!(u.queries_answered(), 0);
    }

    #[test]
    fn rejects_negative_preference() {
        assert!(SimulatedUser::new(vec![1.0, -0.5], 0.1).is_err());
        assert!(SimulatedUser::new(vec![1.0], -0.1).is_err());
    }

    #[test]
    fn verdict_wire_names() {
        for v in [Verdict::PreferLeft, Verdict::PreferRight, Verdict::Indistinguishable] {
            assert_eq!(Verdict::parse(v.as_str()), Some(v));
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
        assert_eq!(Verdict::parse("bogus"), None);
    }
}
