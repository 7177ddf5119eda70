//! Event records and the state they fold into.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::aggregation::{AggEvent, AggregateState, EventKind};
use crate::asset::{parse_asset, Asset, QuestionId};
use crate::geo::GeoPoint;
use crate::modality::{start_session, AnswerPayload, TaskSession, ZoneEvent};
use crate::model::{Assignment, Participant, Project, Task, TaskStatus};
use crate::presence::{Challenge, ChallengeStore, Proof};
use crate::sensing::{plans_for_asset, GateDecision, SampleGate, SensorSample};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCode {
    pub code: String,
    pub project_id: String,
    /// `None` is unlimited.
    pub max_uses: Option<u32>,
    pub uses: u32,
    pub created_at: Timestamp,
    pub expires_at: Option<Timestamp>,
}

impl AccessCode {
    pub fn is_exhausted(&self) -> bool {
        self.max_uses.is_some_and(|m| self.uses >= m)
    }

    pub fn is_expired(&self, now: Timestamp) -> bool {
        self.expires_at.is_some_and(|e| now > e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub id: String,
    pub project_id: String,
    pub asset: Asset,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

/// One line of the service event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub t: Timestamp,
    pub actor: String,
    #[serde(flatten)]
    pub event: DomainEvent,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum DomainEvent {
    ProjectCreated { project: Project },
    AssetUploaded { asset_id: String, project_id: String, document: String },
    AssetReplaced { asset_id: String, document: String },
    TaskCreated { task: Task },
    TaskStatusChanged { task_id: String, status: TaskStatus },
    AssignmentCreated { assignment: Assignment },
    AccessCodeCreated { code: AccessCode },
    Subscribed { participant_id: String, pseudonym: String, code: String },
    SessionStarted { session_id: String, assignment_id: String, participant_id: String },
    LocationRecorded { session_id: String, lat: f64, lon: f64 },
    ChallengeIssued { asset_id: String, challenge: Challenge },
    ProofRejected { session_id: String, proof: Proof },
    AnswerAccepted {
        session_id: String,
        question_id: QuestionId,
        payload: AnswerPayload,
        lat: f64,
        lon: f64,
        proof: Option<Proof>,
    },
    SamplesSubmitted { session_id: String, samples: Vec<SensorSample> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("expected sequence number {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("event {seq} does not apply: {message}")]
    Rejected { seq: u64, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub project: u64,
    pub asset: u64,
    pub task: u64,
    pub assignment: u64,
    pub participant: u64,
    pub session: u64,
    pub code: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofRecord {
    pub session_id: String,
    pub proof: Proof,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSample {
    pub task_id: String,
    pub question_id: QuestionId,
    pub sample: SensorSample,
}

/// Which session and question a participant's live aggregate value came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContributionSource {
    pub session_id: String,
    pub question_id: QuestionId,
}

/// Everything the service knows; always equal to the fold of its event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceState {
    pub seq: u64,
    pub counters: Counters,
    pub projects: BTreeMap<String, Project>,
    pub assets: BTreeMap<String, AssetRecord>,
    pub tasks: BTreeMap<String, Task>,
    pub assignments: BTreeMap<String, Assignment>,
    pub participants: BTreeMap<String, Participant>,
    pub codes: BTreeMap<String, AccessCode>,
    pub sessions: BTreeMap<String, TaskSession>,
    pub presence: ChallengeStore,
    pub challenge_assets: BTreeMap<String, String>,
    pub proofs: Vec<ProofRecord>,
    pub samples: Vec<StoredSample>,
    pub gate: SampleGate,
    pub aggregates: BTreeMap<String, AggregateState>,
    pub aggregate_log: BTreeMap<String, Vec<AggEvent>>,
    pub sources: BTreeMap<String, BTreeMap<String, ContributionSource>>,
}

fn point(lat: f64, lon: f64, seq: u64) -> Result<GeoPoint, StateError> {
    GeoPoint::new(lat, lon).map_err(|e| StateError::Rejected { seq, message: e.to_string() })
}

impl ServiceState {
    pub fn session_for(&self, assignment_id: &str, participant_id: &str) -> Option<&TaskSession> {
        self.sessions
            .values()
            .find(|s| s.assignment_id == assignment_id && s.participant_id == participant_id)
    }

    /// Applies one record. The returned value describes what the event did
    /// and is what the API reports back to the caller.
    pub fn apply(&mut self, rec: &EventRecord) -> Result<Value, StateError> {
        if rec.seq != self.seq + 1 {
            return Err(StateError::Sequence { expected: self.seq + 1, got: rec.seq });
        }
        let seq = rec.seq;
        let t = rec.t;
        let reject = |message: String| StateError::Rejected { seq, message };
        let out = match &rec.event {
            DomainEvent::ProjectCreated { project } => {
                self.counters.project += 1;
                self.projects.insert(project.id.clone(), project.clone());
                json!({ "project_id": project.id })
            }
            DomainEvent::AssetUploaded { asset_id, project_id, document } => {
                let asset = parse_asset(document).map_err(|e| reject(e.to_string()))?;
                self.counters.asset += 1;
                self.assets.insert(
                    asset_id.clone(),
                    AssetRecord { id: asset_id.clone(), project_id: project_id.clone(), asset, created_at: t, updated_at: t },
                );
                json!({ "asset_id": asset_id })
            }
            DomainEvent::AssetReplaced { asset_id, document } => {
                let asset = parse_asset(document).map_err(|e| reject(e.to_string()))?;
                let rec = self.assets.get_mut(asset_id).ok_or_else(|| reject(format!("unknown asset {asset_id}")))?;
                rec.asset = asset;
                rec.updated_at = t;
                json!({ "asset_id": asset_id })
            }
            DomainEvent::TaskCreated { task } => {
                self.counters.task += 1;
                self.tasks.insert(task.id.clone(), task.clone());
                json!({ "task_id": task.id })
            }
            DomainEvent::TaskStatusChanged { task_id, status } => {
                let task = self.tasks.get_mut(task_id).ok_or_else(|| reject(format!("unknown task {task_id}")))?;
                task.status = *status;
                if *status == TaskStatus::Active {
                    for a in self.assignments.values_mut().filter(|a| &a.task_id == task_id) {
                        if a.snapshot.is_none() {
                            a.snapshot = self.assets.get(&a.asset_id).map(|r| r.asset.clone());
                        }
                    }
                }
                json!({ "task_id": task_id, "status": status })
            }
            DomainEvent::AssignmentCreated { assignment } => {
                let mut a = assignment.clone();
                let active = self.tasks.get(&a.task_id).is_some_and(|t| t.status == TaskStatus::Active);
                if active && a.snapshot.is_none() {
                    a.snapshot = self.assets.get(&a.asset_id).map(|r| r.asset.clone());
                }
                self.counters.assignment += 1;
                self.assignments.insert(a.id.clone(), a);
                json!({ "assignment_id": assignment.id, "task_id": assignment.task_id, "asset_id": assignment.asset_id })
            }
            DomainEvent::AccessCodeCreated { code } => {
                self.counters.code += 1;
                self.codes.insert(code.code.clone(), code.clone());
                json!(code)
            }
            DomainEvent::Subscribed { participant_id, pseudonym, code } => {
                let c = self.codes.get_mut(code).ok_or_else(|| reject(format!("unknown code {code}")))?;
                c.uses += 1;
                let project_id = c.project_id.clone();
                if !self.participants.contains_key(participant_id) {
                    self.counters.participant += 1;
                }
                let p = self.participants.entry(participant_id.clone()).or_insert_with(|| Participant {
                    id: participant_id.clone(),
                    pseudonym: pseudonym.clone(),
                    projects: BTreeSet::new(),
                });
                p.projects.insert(project_id.clone());
                json!({ "participant_id": participant_id, "project_id": project_id })
            }
            DomainEvent::SessionStarted { session_id, assignment_id, participant_id } => {
                let a = self.assignments.get(assignment_id).ok_or_else(|| reject(format!("unknown assignment {assignment_id}")))?;
                let task = self.tasks.get(&a.task_id).ok_or_else(|| reject("unknown task".into()))?;
                let p = self.participants.get(participant_id).ok_or_else(|| reject("unknown participant".into()))?;
                let asset = a.snapshot.as_ref().ok_or_else(|| reject("assignment has no snapshot".into()))?;
                let s = start_session(session_id.clone(), a, task, p, asset, t).map_err(|e| reject(e.to_string()))?;
                self.counters.session += 1;
                self.sessions.insert(session_id.clone(), s);
                json!({ "session_id": session_id })
            }
            DomainEvent::LocationRecorded { session_id, lat, lon } => {
                let p = point(*lat, *lon, seq)?;
                let s = self.sessions.get_mut(session_id).ok_or_else(|| reject(format!("unknown session {session_id}")))?;
                let events = s.on_location_update(p, t).map_err(|e| reject(e.to_string()))?;
                let (task_id, participant) = (s.task_id.clone(), s.participant_id.clone());
                let unlocked: Vec<_> = s.unlocked_pois().into_iter().collect();
                for e in &events {
                    if let ZoneEvent::Left(q) = e {
                        self.forward_departure(&task_id, &participant, session_id, *q, t)
                            .map_err(reject)?;
                    }
                }
                json!({ "events": events, "unlocked": unlocked })
            }
            DomainEvent::ChallengeIssued { asset_id, challenge } => {
                self.presence.record(challenge.clone());
                self.challenge_assets.insert(challenge.id.clone(), asset_id.clone());
                json!(challenge)
            }
            DomainEvent::ProofRejected { session_id, proof } => {
                self.proofs.push(ProofRecord { session_id: session_id.clone(), proof: proof.clone() });
                json!(proof)
            }
            DomainEvent::AnswerAccepted { session_id, question_id, payload, lat, lon, proof } => {
                let p = point(*lat, *lon, seq)?;
                let s = self.sessions.get_mut(session_id).ok_or_else(|| reject(format!("unknown session {session_id}")))?;
                let outcome = s
                    .submit_answer(*question_id, payload.clone(), p, proof.as_ref(), t)
                    .map_err(|e| reject(e.to_string()))?;
                let (task_id, participant, total) = (s.task_id.clone(), s.participant_id.clone(), s.credits_earned);
                if let Some(proof) = proof {
                    let ch = self
                        .presence
                        .challenges
                        .get(&proof.challenge_id)
                        .cloned()
                        .ok_or_else(|| reject(format!("unknown challenge {}", proof.challenge_id)))?;
                    self.presence.consume(&ch);
                    self.proofs.push(ProofRecord { session_id: session_id.clone(), proof: proof.clone() });
                }
                if let Some(v) = outcome.value {
                    let agg = self.aggregates.entry(task_id.clone()).or_insert_with(|| AggregateState::new(task_id.clone()));
                    let kind = agg.upsert(&participant, v).map_err(|e| reject(e.to_string()))?;
                    agg.updated_at = Some(t);
                    self.aggregate_log.entry(task_id.clone()).or_default().push(AggEvent {
                        t,
                        kind,
                        participant: participant.clone(),
                        value: Some(v),
                    });
                    self.sources
                        .entry(task_id)
                        .or_default()
                        .insert(participant, ContributionSource { session_id: session_id.clone(), question_id: *question_id });
                }
                json!({
                    "question_id": outcome.question_id,
                    "credits": outcome.credits,
                    "credits_total": total,
                    "unlocked": outcome.unlocked,
                    "completed": outcome.completed,
                })
            }
            DomainEvent::SamplesSubmitted { session_id, samples } => {
                let s = self.sessions.get(session_id).ok_or_else(|| reject(format!("unknown session {session_id}")))?;
                let plans = plans_for_asset(&s.asset);
                let mut decisions = Vec::with_capacity(samples.len());
                let mut accepted = 0;
                for sample in samples {
                    let (q, d) = self.gate.ingest(&plans, s, sample);
                    if let (Some(q), GateDecision::Accept) = (q, d) {
                        accepted += 1;
                        self.samples.push(StoredSample { task_id: s.task_id.clone(), question_id: q, sample: sample.clone() });
                    }
                    decisions.push(json!({ "question_id": q, "decision": d }));
                }
                json!({ "accepted": accepted, "decisions": decisions })
            }
        };
        self.seq = seq;
        Ok(out)
    }

    fn forward_departure(
        &mut self,
        task_id: &str,
        participant: &str,
        session_id: &str,
        q: QuestionId,
        t: Timestamp,
    ) -> Result<(), String> {
        let from_here = self
            .sources
            .get(task_id)
            .and_then(|m| m.get(participant))
            .is_some_and(|src| src.session_id == session_id && src.question_id == q);
        if !from_here {
            return Ok(());
        }
        let agg = self.aggregates.get_mut(task_id).ok_or("no aggregate for task")?;
        agg.leave(participant).map_err(|e| e.to_string())?;
        agg.updated_at = Some(t);
        self.aggregate_log.entry(task_id.to_string()).or_default().push(AggEvent {
            t,
            kind: EventKind::Leave,
            participant: participant.to_string(),
            value: None,
        });
        if let Some(m) = self.sources.get_mut(task_id) {
            m.remove(participant);
        }
        Ok(())
    }

    /// Newline-delimited export of one task: answers, then accepted sensor
    /// samples, then the aggregation event log. See `docs/export-format.md`.
    pub fn export_task(&self, task_id: &str) -> Option<String> {
        self.tasks.get(task_id)?;
        let mut out = String::new();
        let mut line = |v: Value| {
            out.push_str(&v.to_string());
            out.push('\n');
        };
        for s in self.sessions.values().filter(|s| s.task_id == task_id) {
            for a in &s.answers {
                let qtype = s.asset.question(a.question_id).map(|q| q.qtype);
                line(json!({
                    "record": "answer",
                    "task": task_id,
                    "assignment": s.assignment_id,
                    "session": s.id,
                    "participant": s.participant_id,
                    "question": a.question_id,
                    "type": qtype,
                    "payload": a.payload,
                    "answered_at": a.answered_at,
                    "lat": a.location.lat_deg(),
                    "lon": a.location.lon_deg(),
                    "credits": a.credits,
                    "proof": a.proof_id,
                }));
            }
        }
        for s in self.samples.iter().filter(|s| s.task_id == task_id) {
            let mut v = json!({ "record": "sample", "task": task_id, "question": s.question_id });
            if let (Value::Object(m), Value::Object(extra)) = (&mut v, json!(s.sample)) {
                m.extend(extra);
            }
            line(v);
        }
        for e in self.aggregate_log.get(task_id).into_iter().flatten() {
            let mut v = json!({ "record": "aggregate", "task": task_id });
            if let (Value::Object(m), Value::Object(extra)) = (&mut v, json!(e)) {
                m.extend(extra);
            }
            line(v);
        }
        Some(out)
    }
}

/// Folds a complete log from the empty state.
pub fn fold<'a>(events: impl IntoIterator<Item = &'a EventRecord>) -> Result<ServiceState, StateError> {
    let mut s = ServiceState::default();
    for e in events {
        s.apply(e)?;
    }
    Ok(s)
}
