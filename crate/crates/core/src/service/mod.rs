//! Event-sourced experiment service.
//!
//! [`Service::handle`] executes one [`ApiRequest`] on behalf of the caller
//! identified by a bearer token. Mutating requests are validated against the
//! current state, turned into [`DomainEvent`]s, appended to the log and then
//! applied, all under one writer lock, so the state always equals the fold of
//! the log. The HTTP layer in [`http`] only maps routes onto requests.

mod api;
mod config;
#[cfg(feature = "http")]
pub mod http;
mod state;
mod store;

pub use api::{ApiError, ApiRequest, ApiResponse, ProofSubmission};
pub use config::{ConfigError, ServiceConfig, ENV_DATA_DIR, ENV_LISTEN, ENV_SECRET_KEY};
pub use state::{
    fold, AccessCode, AssetRecord, ContributionSource, Counters, DomainEvent, EventRecord, ProofRecord, ServiceState,
    StateError, StoredSample,
};
pub use store::{read_event_log, write_event_log, EventStore, Snapshot, StoreError, EVENTS_FILE, SNAPSHOT_FILE};

use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use serde_json::{json, Value};

use crate::aggregation::{AggregateFn, AggregateState};
use crate::asset::{parse_asset, serialize_asset, validate_asset, Asset};
use crate::geo::GeoPoint;
use crate::modality::start_session;
use crate::model::{auto_assign, Assignment, Project, Task, TaskStatus};
use crate::presence::{PresenceError, PresenceRegistry, Proof, PuzzleVerifier, TokenKey, Verdict};
use crate::sensing::parse_sample_batch;
use crate::time::{Clock, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("event log does not refold: {0}")]
    Replay(#[from] StateError),
}

/// Who is calling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Actor {
    Designer(String),
    Participant(String),
    Anonymous,
}

impl Actor {
    pub fn label(&self) -> String {
        match self {
            Actor::Designer(n) => format!("designer:{n}"),
            Actor::Participant(p) => format!("participant:{p}"),
            Actor::Anonymous => "anonymous".into(),
        }
    }
}

struct Writer {
    log: Vec<EventRecord>,
    store: Option<EventStore>,
    since_snapshot: u64,
}

pub struct Service {
    config: ServiceConfig,
    presence: PresenceRegistry,
    clock: Arc<dyn Clock>,
    state: RwLock<ServiceState>,
    writer: Mutex<Writer>,
}

type ApiResult = Result<ApiResponse, ApiError>;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn point(lat: f64, lon: f64) -> Result<GeoPoint, ApiError> {
    GeoPoint::new(lat, lon).map_err(|e| ApiError::BadRequest("InvalidLocation", e.to_string()))
}

const CODE_ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";

impl Service {
    /// Opens the service, reloading `data_dir` when configured.
    pub fn new(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let presence = PresenceRegistry::new(TokenKey::new(config.secret_key.as_bytes()));
        let mut state = ServiceState::default();
        let mut writer = Writer { log: Vec::new(), store: None, since_snapshot: 0 };
        if let Some(dir) = &config.data_dir {
            let loaded = EventStore::open(dir)?;
            if let Some(snap) = loaded.snapshot {
                state = snap.state;
            }
            let base = state.seq;
            for rec in loaded.events.iter().filter(|r| r.seq > base) {
                state.apply(rec)?;
                writer.since_snapshot += 1;
            }
            writer.log = loaded.events;
            writer.store = Some(loaded.store);
        }
        Ok(Service { config, presence, clock, state: RwLock::new(state), writer: Mutex::new(writer) })
    }

    /// Rebuilds a service from an event log without touching disk.
    pub fn from_events(config: ServiceConfig, clock: Arc<dyn Clock>, events: Vec<EventRecord>) -> Result<Self, ServiceError> {
        let config = ServiceConfig { data_dir: None, ..config };
        let svc = Service::new(config, clock)?;
        *svc.state.write() = fold(&events)?;
        svc.writer.lock().log = events;
        Ok(svc)
    }

    pub fn register_puzzle(&mut self, name: impl Into<String>, verifier: Arc<dyn PuzzleVerifier>) {
        self.presence.register_puzzle(name, verifier);
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn state(&self) -> RwLockReadGuard<'_, ServiceState> {
        self.state.read()
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.writer.lock().log.clone()
    }

    /// Records with sequence number greater than `seq`.
    pub fn events_since(&self, seq: u64) -> Vec<EventRecord> {
        let w = self.writer.lock();
        let start = w.log.partition_point(|r| r.seq <= seq);
        w.log[start..].to_vec()
    }

    pub fn export_task(&self, task_id: &str) -> Option<String> {
        self.state.read().export_task(task_id)
    }

    /// Session token handed to a participant on subscription.
    pub fn participant_token(&self, participant_id: &str) -> String {
        let tag = self.presence.key().tag(format!("participant:{participant_id}").as_bytes());
        format!("{participant_id}.{}", &hex(&tag)[..32])
    }

    pub fn authenticate(&self, bearer: Option<&str>) -> Actor {
        let Some(token) = bearer else { return Actor::Anonymous };
        if let Some(name) = self.config.designer_for_token(token) {
            return Actor::Designer(name.to_string());
        }
        if let Some((id, _)) = token.split_once('.') {
            if self.participant_token(id) == token && self.state.read().participants.contains_key(id) {
                return Actor::Participant(id.to_string());
            }
        }
        Actor::Anonymous
    }

    pub fn handle(&self, bearer: Option<&str>, req: ApiRequest) -> ApiResponse {
        let actor = self.authenticate(bearer);
        self.dispatch(&actor, req).unwrap_or_else(ApiError::into_response)
    }

    fn dispatch(&self, actor: &Actor, req: ApiRequest) -> ApiResult {
        match req {
            ApiRequest::CreateProject { name, auto_assign } => self.create_project(actor, name, auto_assign),
            ApiRequest::GetProject { project_id } => {
                designer(actor)?;
                let st = self.state.read();
                let p = st.projects.get(&project_id).ok_or_else(|| ApiError::NotFound(project_id.clone()))?;
                let tasks: Vec<_> = st.tasks.values().filter(|t| t.project_id == project_id).collect();
                let assets: Vec<_> = st.assets.values().filter(|a| a.project_id == project_id).map(|a| &a.id).collect();
                Ok(ApiResponse::ok(json!({ "project": p, "tasks": tasks, "assets": assets })))
            }
            ApiRequest::UploadAsset { project_id, document } => self.upload_asset(actor, project_id, document),
            ApiRequest::ReplaceAsset { asset_id, document } => self.replace_asset(actor, asset_id, document),
            ApiRequest::GetAsset { asset_id } => {
                designer(actor)?;
                let st = self.state.read();
                let a = st.assets.get(&asset_id).ok_or_else(|| ApiError::NotFound(asset_id.clone()))?;
                Ok(ApiResponse::ok(asset_document(&a.asset)))
            }
            ApiRequest::CreateTask { project_id, name } => self.create_task(actor, project_id, name),
            ApiRequest::ActivateTask { task_id } => self.set_task_status(actor, task_id, TaskStatus::Active),
            ApiRequest::CloseTask { task_id } => self.set_task_status(actor, task_id, TaskStatus::Closed),
            ApiRequest::CreateAssignment { asset_id, task_id, participants } => {
                self.create_assignment(actor, asset_id, task_id, participants)
            }
            ApiRequest::CreateAccessCode { project_id, max_uses, ttl_s } => {
                self.create_access_code(actor, project_id, max_uses, ttl_s)
            }
            ApiRequest::IssueChallenge { asset_id, question_id, spec, ttl_s } => {
                designer(actor)?;
                let mut w = self.writer.lock();
                let now = self.clock.now();
                let challenge = {
                    let st = self.state.read();
                    let a = st.assets.get(&asset_id).ok_or_else(|| ApiError::NotFound(asset_id.clone()))?;
                    self.presence
                        .prepare_in(&st.presence, &a.asset, question_id, spec, ttl_s, now)
                        .map_err(|e| ApiError::NotFound(e.to_string()))?
                };
                let out = self.commit(&mut w, actor, now, vec![DomainEvent::ChallengeIssued { asset_id, challenge }])?;
                Ok(ApiResponse::created(out.into_iter().next().unwrap_or_default()))
            }
            ApiRequest::Subscribe { code, pseudonym } => self.subscribe(actor, code, pseudonym),
            ApiRequest::ListTasks { participant_id } => self.list_tasks(actor, participant_id),
            ApiRequest::StartSession { assignment_id } => self.start_session(actor, assignment_id),
            ApiRequest::GetSession { session_id } => {
                let st = self.state.read();
                let s = owned_session(&st, actor, &session_id)?;
                Ok(ApiResponse::ok(session_view(s)))
            }
            ApiRequest::PostLocation { session_id, lat, lon } => {
                point(lat, lon)?;
                let mut w = self.writer.lock();
                {
                    let st = self.state.read();
                    let s = owned_session(&st, actor, &session_id)?;
                    if s.is_complete() && s.present.is_empty() {
                        return Err(crate::modality::ModalityError::SessionComplete.into());
                    }
                }
                let now = self.clock.now();
                let out = self.commit(&mut w, actor, now, vec![DomainEvent::LocationRecorded { session_id, lat, lon }])?;
                Ok(ApiResponse::ok(out.into_iter().next().unwrap_or_default()))
            }
            ApiRequest::PostAnswer { session_id, question_id, payload, lat, lon, proof } => {
                self.post_answer(actor, session_id, question_id, payload, lat, lon, proof)
            }
            ApiRequest::PostSensors { session_id, batch } => {
                let samples = parse_sample_batch(&batch).map_err(|e| ApiError::BadRequest("InvalidBatch", e.to_string()))?;
                if let Some(s) = samples.iter().find(|s| s.session != session_id) {
                    return Err(ApiError::BadRequest(
                        "InvalidBatch",
                        format!("sample for session {} posted to {session_id}", s.session),
                    ));
                }
                let mut w = self.writer.lock();
                owned_session(&self.state.read(), actor, &session_id)?;
                let now = self.clock.now();
                let out = self.commit(&mut w, actor, now, vec![DomainEvent::SamplesSubmitted { session_id, samples }])?;
                Ok(ApiResponse::ok(out.into_iter().next().unwrap_or_default()))
            }
            ApiRequest::GetAggregate { task_id, function } => {
                designer(actor)?;
                let f: AggregateFn = function
                    .parse()
                    .map_err(|_| ApiError::BadRequest("UnknownFunction", format!("unknown aggregate function {function:?}")))?;
                let st = self.state.read();
                if !st.tasks.contains_key(&task_id) {
                    return Err(ApiError::NotFound(task_id));
                }
                let result = match st.aggregates.get(&task_id) {
                    Some(a) => a.result(f),
                    None => AggregateState::new(task_id.clone()).result(f),
                };
                let mut body = json!(result);
                body["task"] = json!(task_id);
                Ok(ApiResponse::ok(body))
            }
            ApiRequest::Export { task_id } => {
                designer(actor)?;
                let text = self.export_task(&task_id).ok_or(ApiError::NotFound(task_id))?;
                Ok(ApiResponse::ok(Value::String(text)))
            }
        }
    }

    /// Appends and applies `events` in order. Called with the writer lock held.
    fn commit(&self, w: &mut Writer, actor: &Actor, t: Timestamp, events: Vec<DomainEvent>) -> Result<Vec<Value>, ApiError> {
        let mut outs = Vec::with_capacity(events.len());
        for event in events {
            let mut st = self.state.write();
            let rec = EventRecord { seq: st.seq + 1, t, actor: actor.label(), event };
            let out = st.apply(&rec).map_err(|e| ApiError::Internal(e.to_string()))?;
            if let Some(store) = w.store.as_mut() {
                store.append(&rec).map_err(|e| ApiError::Internal(e.to_string()))?;
                w.since_snapshot += 1;
                if w.since_snapshot >= self.config.snapshot_every {
                    store.write_snapshot(&st).map_err(|e| ApiError::Internal(e.to_string()))?;
                    w.since_snapshot = 0;
                }
            }
            w.log.push(rec);
            outs.push(out);
        }
        Ok(outs)
    }

    fn create_project(&self, actor: &Actor, name: String, auto_assign: bool) -> ApiResult {
        let owner = designer(actor)?;
        if name.trim().is_empty() {
            return Err(ApiError::BadRequest("InvalidName", "project name must not be empty".into()));
        }
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let id = format!("prj-{}", self.state.read().counters.project + 1);
        let project = Project { id, name, owner, auto_assign, created_at: now };
        self.commit(&mut w, actor, now, vec![DomainEvent::ProjectCreated { project: project.clone() }])?;
        Ok(ApiResponse::created(json!(project)))
    }

    fn upload_asset(&self, actor: &Actor, project_id: String, document: String) -> ApiResult {
        designer(actor)?;
        let asset = parse_asset(&document)?;
        let report = validate_asset(&asset);
        if !report.is_clean() {
            return Err(ApiError::Validation(report));
        }
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let (asset_id, events, assignment_id) = {
            let st = self.state.read();
            let project = st.projects.get(&project_id).ok_or_else(|| ApiError::NotFound(project_id.clone()))?;
            let asset_id = format!("ast-{}", st.counters.asset + 1);
            let mut events = vec![DomainEvent::AssetUploaded {
                asset_id: asset_id.clone(),
                project_id: project_id.clone(),
                document,
            }];
            let mut assignment_id = None;
            let open_tasks = st.tasks.values().filter(|t| t.status != TaskStatus::Closed);
            let mut tasks: Vec<&Task> = open_tasks.collect();
            tasks.sort_by_key(|t| task_number(&t.id));
            if let Ok(a) = auto_assign(project, tasks, &asset_id, format!("asg-{}", st.counters.assignment + 1), now) {
                assignment_id = Some(a.id.clone());
                events.push(DomainEvent::AssignmentCreated { assignment: a });
            }
            (asset_id, events, assignment_id)
        };
        self.commit(&mut w, actor, now, events)?;
        Ok(ApiResponse::created(json!({
            "asset_id": asset_id,
            "project_id": project_id,
            "assignment_id": assignment_id,
            "notes": report.notes,
        })))
    }

    fn replace_asset(&self, actor: &Actor, asset_id: String, document: String) -> ApiResult {
        designer(actor)?;
        let asset = parse_asset(&document)?;
        let report = validate_asset(&asset);
        if !report.is_clean() {
            return Err(ApiError::Validation(report));
        }
        let mut w = self.writer.lock();
        if !self.state.read().assets.contains_key(&asset_id) {
            return Err(ApiError::NotFound(asset_id));
        }
        let now = self.clock.now();
        self.commit(&mut w, actor, now, vec![DomainEvent::AssetReplaced { asset_id: asset_id.clone(), document }])?;
        Ok(ApiResponse::ok(json!({ "asset_id": asset_id, "notes": report.notes })))
    }

    fn create_task(&self, actor: &Actor, project_id: String, name: String) -> ApiResult {
        designer(actor)?;
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let task = {
            let st = self.state.read();
            if !st.projects.contains_key(&project_id) {
                return Err(ApiError::NotFound(project_id));
            }
            Task { id: format!("tsk-{}", st.counters.task + 1), project_id, name, created_at: now, status: TaskStatus::Draft }
        };
        self.commit(&mut w, actor, now, vec![DomainEvent::TaskCreated { task: task.clone() }])?;
        Ok(ApiResponse::created(json!(task)))
    }

    fn set_task_status(&self, actor: &Actor, task_id: String, status: TaskStatus) -> ApiResult {
        designer(actor)?;
        let mut w = self.writer.lock();
        {
            let st = self.state.read();
            let task = st.tasks.get(&task_id).ok_or_else(|| ApiError::NotFound(task_id.clone()))?;
            match (task.status, status) {
                (TaskStatus::Closed, _) => {
                    return Err(ApiError::Conflict("TaskClosed", format!("task {task_id} is closed")))
                }
                (a, b) if a == b => return Ok(ApiResponse::ok(json!({ "task_id": task_id, "status": status }))),
                _ => {}
            }
        }
        let now = self.clock.now();
        let out = self.commit(&mut w, actor, now, vec![DomainEvent::TaskStatusChanged { task_id, status }])?;
        Ok(ApiResponse::ok(out.into_iter().next().unwrap_or_default()))
    }

    fn create_assignment(
        &self,
        actor: &Actor,
        asset_id: String,
        task_id: String,
        participants: std::collections::BTreeSet<String>,
    ) -> ApiResult {
        designer(actor)?;
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let assignment = {
            let st = self.state.read();
            let asset = st.assets.get(&asset_id).ok_or_else(|| ApiError::NotFound(asset_id.clone()))?;
            let task = st.tasks.get(&task_id).ok_or_else(|| ApiError::NotFound(task_id.clone()))?;
            if asset.project_id != task.project_id {
                return Err(ApiError::Conflict(
                    "CrossProject",
                    format!("asset {asset_id} and task {task_id} belong to different projects"),
                ));
            }
            if task.status == TaskStatus::Closed {
                return Err(ApiError::Conflict("TaskClosed", format!("task {task_id} is closed")));
            }
            if let Some(p) = participants.iter().find(|p| !st.participants.contains_key(*p)) {
                return Err(ApiError::NotFound(p.clone()));
            }
            Assignment {
                id: format!("asg-{}", st.counters.assignment + 1),
                project_id: task.project_id.clone(),
                asset_id,
                task_id,
                participants,
                created_at: now,
                snapshot: None,
            }
        };
        let out = self.commit(&mut w, actor, now, vec![DomainEvent::AssignmentCreated { assignment }])?;
        Ok(ApiResponse::created(out.into_iter().next().unwrap_or_default()))
    }

    fn create_access_code(&self, actor: &Actor, project_id: String, max_uses: Option<u32>, ttl_s: Option<u64>) -> ApiResult {
        designer(actor)?;
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let code = {
            let st = self.state.read();
            if !st.projects.contains_key(&project_id) {
                return Err(ApiError::NotFound(project_id));
            }
            let mut n = st.counters.code + 1;
            let code = loop {
                let c = self.derive_code(n);
                if !st.codes.contains_key(&c) {
                    break c;
                }
                n += 1;
            };
            AccessCode {
                code,
                project_id,
                max_uses,
                uses: 0,
                created_at: now,
                expires_at: ttl_s.map(|s| now.plus_secs(s as i64)),
            }
        };
        self.commit(&mut w, actor, now, vec![DomainEvent::AccessCodeCreated { code: code.clone() }])?;
        Ok(ApiResponse::created(json!(code)))
    }

    fn derive_code(&self, n: u64) -> String {
        let tag = self.presence.key().tag(format!("code:{n}").as_bytes());
        tag.iter().take(8).map(|b| CODE_ALPHABET[(*b as usize) % CODE_ALPHABET.len()] as char).collect()
    }

    fn subscribe(&self, actor: &Actor, code: String, pseudonym: Option<String>) -> ApiResult {
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let (participant_id, pseudonym, project_id) = {
            let st = self.state.read();
            let c = st
                .codes
                .get(code.trim())
                .ok_or_else(|| ApiError::Forbidden("InvalidCode", "unknown access code".into()))?;
            if c.is_expired(now) {
                return Err(ApiError::Forbidden("ExpiredCode", "access code has expired".into()));
            }
            if c.is_exhausted() {
                return Err(ApiError::Forbidden("ExhaustedCode", "access code has no uses left".into()));
            }
            let (id, pseudonym) = match actor {
                Actor::Participant(id) => (id.clone(), st.participants[id].pseudonym.clone()),
                _ => {
                    let n = st.counters.participant + 1;
                    (format!("par-{n}"), pseudonym.unwrap_or_else(|| format!("participant-{n}")))
                }
            };
            (id, pseudonym, c.project_id.clone())
        };
        self.commit(
            &mut w,
            actor,
            now,
            vec![DomainEvent::Subscribed { participant_id: participant_id.clone(), pseudonym, code: code.trim().to_string() }],
        )?;
        Ok(ApiResponse::ok(json!({
            "participant_id": participant_id,
            "project_id": project_id,
            "token": self.participant_token(&participant_id),
        })))
    }

    fn list_tasks(&self, actor: &Actor, participant_id: String) -> ApiResult {
        match actor {
            Actor::Designer(_) => {}
            Actor::Participant(p) if *p == participant_id => {}
            Actor::Participant(_) => return Err(ApiError::Forbidden("Forbidden", "not your participant id".into())),
            Actor::Anonymous => return Err(ApiError::Unauthorized),
        }
        let st = self.state.read();
        let p = st.participants.get(&participant_id).ok_or_else(|| ApiError::NotFound(participant_id.clone()))?;
        let mut out = Vec::new();
        for a in st.assignments.values() {
            let Some(task) = st.tasks.get(&a.task_id) else { continue };
            if task.status != TaskStatus::Active || !p.projects.contains(&a.project_id) || !a.permits(&p.id) {
                continue;
            }
            let Some(snapshot) = &a.snapshot else { continue };
            out.push(json!({
                "assignment_id": a.id,
                "task_id": task.id,
                "task_name": task.name,
                "project_id": a.project_id,
                "asset_id": a.asset_id,
                "asset": asset_document(snapshot),
                "session_id": st.session_for(&a.id, &p.id).map(|s| &s.id),
            }));
        }
        Ok(ApiResponse::ok(json!({ "participant_id": participant_id, "tasks": out })))
    }

    fn start_session(&self, actor: &Actor, assignment_id: String) -> ApiResult {
        let Actor::Participant(pid) = actor else {
            return Err(ApiError::Unauthorized);
        };
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let session_id = {
            let st = self.state.read();
            if let Some(s) = st.session_for(&assignment_id, pid) {
                return Ok(ApiResponse::ok(session_view(s)));
            }
            let a = st.assignments.get(&assignment_id).ok_or_else(|| ApiError::NotFound(assignment_id.clone()))?;
            let task = &st.tasks[&a.task_id];
            let p = &st.participants[pid];
            let asset = a.snapshot.as_ref().ok_or(crate::modality::ModalityError::AssignmentClosed)?;
            let id = format!("ses-{}", st.counters.session + 1);
            start_session(id.clone(), a, task, p, asset, now)?;
            id
        };
        self.commit(
            &mut w,
            actor,
            now,
            vec![DomainEvent::SessionStarted {
                session_id: session_id.clone(),
                assignment_id,
                participant_id: pid.clone(),
            }],
        )?;
        let st = self.state.read();
        Ok(ApiResponse::created(session_view(&st.sessions[&session_id])))
    }

    #[allow(clippy::too_many_arguments)]
    fn post_answer(
        &self,
        actor: &Actor,
        session_id: String,
        question_id: u32,
        payload: crate::modality::AnswerPayload,
        lat: f64,
        lon: f64,
        proof: Option<ProofSubmission>,
    ) -> ApiResult {
        let location = point(lat, lon)?;
        let mut w = self.writer.lock();
        let now = self.clock.now();
        let decided: Option<Proof> = {
            let st = self.state.read();
            let s = owned_session(&st, actor, &session_id)?;
            match &proof {
                None => None,
                Some(sub) => {
                    let invalid = || ApiError::Modality(crate::modality::ModalityError::ProofInvalid(question_id));
                    let ch = st.presence.challenges.get(&sub.challenge_id).ok_or_else(invalid)?;
                    let asset_id = &st.assignments[&s.assignment_id].asset_id;
                    if st.challenge_assets.get(&ch.id) != Some(asset_id) {
                        return Err(invalid());
                    }
                    let verdict = match self.presence.check_in(&st.presence, ch, &sub.response, now) {
                        Ok(v) => v,
                        Err(PresenceError::AlreadyUsed) => {
                            return Err(ApiError::Conflict("ProofReused", "challenge has already been used".into()))
                        }
                        Err(_) => return Err(invalid()),
                    };
                    Some(Proof {
                        challenge_id: ch.id.clone(),
                        question_id: ch.question_id,
                        response: sub.response.clone(),
                        submitted_at: now,
                        verdict,
                    })
                }
            }
        };
        if let Some(p) = decided.as_ref().filter(|p| p.verdict == Verdict::Rejected) {
            self.commit(
                &mut w,
                actor,
                now,
                vec![DomainEvent::ProofRejected { session_id, proof: p.clone() }],
            )?;
            return Err(crate::modality::ModalityError::ProofInvalid(question_id).into());
        }
        {
            let st = self.state.read();
            let mut dry = st.sessions[&session_id].clone();
            dry.submit_answer(question_id, payload.clone(), location, decided.as_ref(), now)?;
        }
        let out = self.commit(
            &mut w,
            actor,
            now,
            vec![DomainEvent::AnswerAccepted { session_id, question_id, payload, lat, lon, proof: decided }],
        )?;
        Ok(ApiResponse::ok(out.into_iter().next().unwrap_or_default()))
    }
}

fn designer(actor: &Actor) -> Result<String, ApiError> {
    match actor {
        Actor::Designer(n) => Ok(n.clone()),
        Actor::Participant(_) => Err(ApiError::Forbidden("Forbidden", "designer token required".into())),
        Actor::Anonymous => Err(ApiError::Unauthorized),
    }
}

fn owned_session<'a>(
    st: &'a ServiceState,
    actor: &Actor,
    session_id: &str,
) -> Result<&'a crate::modality::TaskSession, ApiError> {
    let s = st.sessions.get(session_id).ok_or_else(|| ApiError::NotFound(session_id.to_string()))?;
    match actor {
        Actor::Participant(p) if *p == s.participant_id => Ok(s),
        Actor::Designer(_) => Ok(s),
        Actor::Participant(_) => Err(ApiError::Forbidden("Forbidden", "session belongs to another participant".into())),
        Actor::Anonymous => Err(ApiError::Unauthorized),
    }
}

fn task_number(id: &str) -> u64 {
    id.rsplit('-').next().and_then(|n| n.parse().ok()).unwrap_or(0)
}

fn asset_document(a: &Asset) -> Value {
    serde_json::from_str(&serialize_asset(a)).expect("serialized asset is JSON")
}

fn session_view(s: &crate::modality::TaskSession) -> Value {
    let pois: Vec<Value> = s
        .poi_status
        .iter()
        .map(|(q, status)| json!({ "question_id": q, "status": status, "zone": s.zones.get(q) }))
        .collect();
    json!({
        "session_id": s.id,
        "assignment_id": s.assignment_id,
        "task_id": s.task_id,
        "participant_id": s.participant_id,
        "pois": pois,
        "credits": s.credits_earned,
        "completed": s.is_complete(),
        "started_at": s.started_at,
        "completed_at": s.completed_at,
    })
}
