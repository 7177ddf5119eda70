//! Localized real-time aggregation with rollback.
//!
//! Each participant holds at most one live contribution per task. Joining,
//! updating and leaving bump a per-participant version; leaving leaves a
//! tombstone. Aggregates are always computed from the live multiset, so a
//! departure removes its value exactly, extrema included.

mod gossip;
mod oracle;

pub use gossip::{gossip_round, merge_stores, GossipNetwork, GossipNode, Topology};
pub use oracle::{engine_and_oracle, oracle_aggregate, parse_event_log, write_event_log};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregationError {
    #[error("participant {0} already has a live contribution")]
    AlreadyJoined(String),
    #[error("participant {0} has no live contribution")]
    NotJoined(String),
    #[error("contribution value must be finite")]
    InvalidValue,
    #[error("unknown aggregate function {0:?}")]
    UnknownFunction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateFn {
    Sum,
    Avg,
    Max,
    Min,
    Count,
}

impl AggregateFn {
    pub const ALL: [AggregateFn; 5] = [AggregateFn::Sum, AggregateFn::Avg, AggregateFn::Max, AggregateFn::Min, AggregateFn::Count];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregateFn::Sum => "sum",
            AggregateFn::Avg => "avg",
            AggregateFn::Max => "max",
            AggregateFn::Min => "min",
            AggregateFn::Count => "count",
        }
    }
}

impl FromStr for AggregateFn {
    type Err = AggregationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(AggregateFn::Sum),
            "avg" | "mean" | "average" => Ok(AggregateFn::Avg),
            "max" => Ok(AggregateFn::Max),
            "min" => Ok(AggregateFn::Min),
            "count" => Ok(AggregateFn::Count),
            other => Err(AggregationError::UnknownFunction(other.to_string())),
        }
    }
}

impl fmt::Display for AggregateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub participant: String,
    pub task: String,
    pub value: f64,
    pub version: u64,
    pub tombstone: bool,
}

impl Contribution {
    /// Total order used to merge replicas: higher version wins; equal
    /// versions are broken deterministically.
    pub fn precedence(&self) -> (u64, bool, OrderedFloat<f64>) {
        (self.version, self.tombstone, OrderedFloat(self.value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Join,
    Update,
    Leave,
}

/// One line of the aggregation event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggEvent {
    pub t: Timestamp,
    pub kind: EventKind,
    pub participant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    #[serde(rename = "fn")]
    pub function: AggregateFn,
    pub value: Option<f64>,
    pub count: u64,
    pub updated_at: Option<Timestamp>,
}

/// Multiset of the live values plus the latest contribution of every
/// participant that ever joined.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateState {
    pub task: String,
    values: BTreeMap<OrderedFloat<f64>, u64>,
    contributions: BTreeMap<String, Contribution>,
    pub updated_at: Option<Timestamp>,
}

impl AggregateState {
    pub fn new(task: impl Into<String>) -> Self {
        AggregateState { task: task.into(), ..Default::default() }
    }

    fn add(&mut self, v: f64) {
        *self.values.entry(OrderedFloat(v)).or_insert(0) += 1;
    }

    fn remove(&mut self, v: f64) {
        let key = OrderedFloat(v);
        match self.values.get_mut(&key) {
            Some(c) if *c > 1 => *c -= 1,
            Some(_) => {
                self.values.remove(&key);
            }
            None => unreachable!("live value missing from multiset"),
        }
    }

    pub fn live(&self, participant: &str) -> Option<&Contribution> {
        self.contributions.get(participant).filter(|c| !c.tombstone)
    }

    pub fn contribution(&self, participant: &str) -> Option<&Contribution> {
        self.contributions.get(participant)
    }

    fn next_version(&self, participant: &str) -> u64 {
        self.contributions.get(participant).map_or(1, |c| c.version + 1)
    }

    pub fn join(&mut self, participant: &str, value: f64) -> Result<&Contribution, AggregationError> {
        if !value.is_finite() {
            return Err(AggregationError::InvalidValue);
        }
        if self.live(participant).is_some() {
            return Err(AggregationError::AlreadyJoined(participant.to_string()));
        }
        let c = Contribution {
            participant: participant.to_string(),
            task: self.task.clone(),
            value,
            version: self.next_version(participant),
            tombstone: false,
        };
        self.add(value);
        self.contributions.insert(participant.to_string(), c);
        Ok(&self.contributions[participant])
    }

    /// Replaces the participant's value; the old one is rolled back first.
    pub fn update(&mut self, participant: &str, value: f64) -> Result<&Contribution, AggregationError> {
        if !value.is_finite() {
            return Err(AggregationError::InvalidValue);
        }
        let old = self
            .live(participant)
            .map(|c| c.value)
            .ok_or_else(|| AggregationError::NotJoined(participant.to_string()))?;
        let version = self.next_version(participant);
        self.remove(old);
        self.add(value);
        let c = self.contributions.get_mut(participant).expect("live");
        c.value = value;
        c.version = version;
        Ok(c)
    }

    pub fn leave(&mut self, participant: &str) -> Result<&Contribution, AggregationError> {
        let old = self
            .live(participant)
            .map(|c| c.value)
            .ok_or_else(|| AggregationError::NotJoined(participant.to_string()))?;
        let version = self.next_version(participant);
        self.remove(old);
        let c = self.contributions.get_mut(participant).expect("live");
        c.version = version;
        c.tombstone = true;
        Ok(c)
    }

    /// Join when absent, update when live.
    pub fn upsert(&mut self, participant: &str, value: f64) -> Result<EventKind, AggregationError> {
        if self.live(participant).is_some() {
            self.update(participant, value).map(|_| EventKind::Update)
        } else {
            self.join(participant, value).map(|_| EventKind::Join)
        }
    }

    pub fn apply(&mut self, e: &AggEvent) -> Result<(), AggregationError> {
        match e.kind {
            EventKind::Join => self.join(&e.participant, e.value.ok_or(AggregationError::InvalidValue)?)?,
            EventKind::Update => self.update(&e.participant, e.value.ok_or(AggregationError::InvalidValue)?)?,
            EventKind::Leave => self.leave(&e.participant)?,
        };
        self.updated_at = Some(e.t);
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.values.values().sum()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|(v, &c)| v.0 * c as f64).sum()
    }

    /// `None` is the Empty result: avg, min and max of no participants.
    pub fn read(&self, f: AggregateFn) -> Option<f64> {
        match f {
            AggregateFn::Count => Some(self.count() as f64),
            AggregateFn::Sum => Some(self.sum()),
            AggregateFn::Avg => match self.count() {
                0 => None,
                n => Some(self.sum() / n as f64),
            },
            AggregateFn::Max => self.values.keys().next_back().map(|v| v.0),
            AggregateFn::Min => self.values.keys().next().map(|v| v.0),
        }
    }

    pub fn result(&self, f: AggregateFn) -> AggregateResult {
        AggregateResult { function: f, value: self.read(f), count: self.count(), updated_at: self.updated_at }
    }

    pub fn contributions(&self) -> impl Iterator<Item = &Contribution> {
        self.contributions.values()
    }
}
