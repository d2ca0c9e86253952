//! A session is an event log plus the engine state obtained by replaying it.

use std::sync::Arc;

use mopref_core::{
    run_elicitation, BasisCache, ComparisonQuery, ElicitationError, ElicitationReport64, EngineConfig, Momdp64,
    OracleError, OracleSession, ReplayResponder, Verdict,
};

use crate::log::EventLog;

#[derive(Debug, Clone)]
pub enum Status {
    Active(ComparisonQuery<f64>),
    Complete(Box<ElicitationReport64>),
    Aborted,
    Failed(String),
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Active(_) => "active",
            Status::Complete(_) => "complete",
            Status::Aborted => "aborted",
            Status::Failed(_) => "failed",
        }
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub instance_id: String,
    pub mdp: Arc<Momdp64>,
    pub config: EngineConfig,
    pub verdicts: Vec<Verdict>,
    pub status: Status,
    pub log: EventLog,
    pub created: u64,
    pub updated: u64,
}

impl Session {
    pub fn pending(&self) -> Option<&ComparisonQuery<f64>> {
        match &self.status {
            Status::Active(q) => Some(q),
            _ => None,
        }
    }
}

/// Reruns the elicitation from scratch on the recorded verdicts.
pub fn replay(mdp: &Momdp64, config: &EngineConfig, verdicts: &[Verdict], cache: &BasisCache<f64>) -> Status {
    let mut session = OracleSession::new(None);
    let mut responder = ReplayResponder::new(verdicts.iter().copied());
    match run_elicitation(mdp, &mut session, &mut responder, config, Some(cache)) {
        Ok(report) if responder.parked().is_none() && session.transcript().len() == verdicts.len() => {
            Status::Complete(Box::new(report))
        }
        Ok(_) => Status::Failed("more answers recorded than the elicitation asked for".into()),
        Err(ElicitationError::Oracle(OracleError::Awaiting { .. })) => match responder.into_parked() {
            Some(query) => Status::Active(query),
            None => Status::Failed("elicitation suspended without a query".into()),
        },
        Err(e) => Status::Failed(e.to_string()),
    }
}
