//! Cohort runner and simulation logs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::policy::{PolicyError, ProofStrategy};
use super::scenario::{participant_seed, CohortSpec};
use super::trace::{generate_trace, TraceError, TracePoint};
use crate::asset::{parse_asset, serialize_asset, Asset, AssetError, QuestionId, SensorKind};
use crate::modality::ZoneEvent;
use crate::presence::ChallengeSpec;
use crate::sensing::{plans_for_asset, write_sample_batch, SamplingPlan, SensorSample};
use crate::service::{ApiRequest, ApiResponse, EventRecord, ProofSubmission, Service, ServiceConfig, ServiceError};
use crate::time::{Timestamp, VirtualClock};

pub const SIM_SECRET: &str = "simulation-secret";
pub const SIM_DESIGNER: &str = "operator";
pub const SIM_DESIGNER_TOKEN: &str = "operator-token";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("setup request failed: {0}")]
    Setup(String),
    #[error("simulation log line {line}: {message}")]
    LogFormat { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("replay diverged at log entry {0}")]
    DivergenceDetected(u64),
    #[error("service failed to start: {0}")]
    Service(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub name: String,
    pub seed: u64,
    pub secret_key: String,
    pub designer: String,
    pub designer_token: String,
}

/// One request as seen by the client, with the engine events it caused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub t: Timestamp,
    pub client: String,
    pub bearer: Option<String>,
    pub request: ApiRequest,
    pub response: ApiResponse,
    pub events: Vec<EventRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub header: LogHeader,
    pub entries: Vec<LogEntry>,
}

impl SimulationLog {
    pub fn empty() -> Self {
        SimulationLog {
            header: LogHeader {
                name: String::new(),
                seed: 0,
                secret_key: SIM_SECRET.into(),
                designer: SIM_DESIGNER.into(),
                designer_token: SIM_DESIGNER_TOKEN.into(),
            },
            entries: Vec::new(),
        }
    }

    /// Header line followed by one entry per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, SimError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, e: serde_json::Error| SimError::LogFormat { line: line + 1, message: e.to_string() };
        let (i, first) = lines.next().ok_or(SimError::LogFormat { line: 1, message: "missing header".into() })?;
        let header = serde_json::from_str(first).map_err(|e| err(i, e))?;
        let entries = lines.map(|(i, l)| serde_json::from_str(l).map_err(|e| err(i, e))).collect::<Result<_, _>>()?;
        Ok(SimulationLog { header, entries })
    }

    /// Engine event records across all entries, in order.
    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.entries.iter().flat_map(|e| e.events.iter())
    }
}

pub struct SimulationRun {
    pub log: SimulationLog,
    pub service: Service,
    pub task_id: String,
}

impl SimulationRun {
    pub fn export(&self) -> String {
        self.service.export_task(&self.task_id).expect("task exists")
    }
}

fn sim_config(header: &LogHeader) -> ServiceConfig {
    ServiceConfig::ephemeral(&header.secret_key, &header.designer, &header.designer_token)
}

struct Driver {
    svc: Service,
    clock: VirtualClock,
    log: SimulationLog,
}

impl Driver {
    fn call(&mut self, t: Timestamp, client: &str, bearer: Option<&str>, request: ApiRequest, note: Option<String>) -> ApiResponse {
        self.clock.set(t);
        let before = self.svc.state().seq;
        let response = self.svc.handle(bearer, request.clone());
        let events = self.svc.events_since(before);
        self.log.entries.push(LogEntry {
            seq: self.log.entries.len() as u64 + 1,
            t,
            client: client.to_string(),
            bearer: bearer.map(str::to_string),
            request,
            response: response.clone(),
            events,
            note,
        });
        response
    }

    fn setup(&mut self, t: Timestamp, request: ApiRequest) -> Result<Value, SimError> {
        let token = self.log.header.designer_token.clone();
        let res = self.call(t, "designer", Some(&token), request, None);
        if res.is_success() {
            Ok(res.body)
        } else {
            Err(SimError::Setup(res.body.to_string()))
        }
    }
}

fn field(v: &Value, k: &str) -> String {
    v[k].as_str().unwrap_or_default().to_string()
}

struct Client {
    label: String,
    token: String,
    assignment_id: String,
    asset_id: String,
    asset: Asset,
    plans: Vec<SamplingPlan>,
    trace: Vec<TracePoint>,
    start: Timestamp,
    session_id: Option<String>,
    rng: ChaCha8Rng,
    inside: BTreeMap<QuestionId, Timestamp>,
    settled: BTreeSet<QuestionId>,
    answers: usize,
    last_tick: Option<Timestamp>,
    done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Start,
    Tick(usize),
}

/// Drives `spec` through a fresh in-process service on a virtual clock.
///
/// Participants are interleaved on a time-ordered queue (ties broken by
/// participant index). Each one subscribes, starts a session, posts every
/// trace fix, uploads sensor samples for the zones it is in, and answers a
/// question when its true position is at that point of interest, retrying
/// on later fixes while it is still there if the answer was not localized.
pub fn run_cohort(spec: &CohortSpec) -> Result<SimulationRun, SimError> {
    let base = parse_asset(&spec.asset_document)?;
    for p in &spec.participants {
        p.policy.validate()?;
    }
    let mut log = SimulationLog::empty();
    log.header.name = spec.name.clone();
    log.header.seed = spec.seed;
    let clock = VirtualClock::new(spec.start);
    let svc = Service::new(sim_config(&log.header), Arc::new(clock.clone()))?;
    let mut d = Driver { svc, clock, log };
    let t0 = spec.start;
    let n = spec.participants.len();

    let project = field(&d.setup(t0, ApiRequest::CreateProject { name: spec.name.clone(), auto_assign: false })?, "id");
    let task_id = field(&d.setup(t0, ApiRequest::CreateTask { project_id: project.clone(), name: spec.name.clone() })?, "id");
    let code = d.setup(
        t0,
        ApiRequest::CreateAccessCode { project_id: project.clone(), max_uses: Some(n as u32), ttl_s: None },
    )?;
    let code = field(&code, "code");

    let mut subs = Vec::with_capacity(n);
    for i in 0..n {
        let label = format!("participant-{}", i + 1);
        let res = d.call(t0, &label, None, ApiRequest::Subscribe { code: code.clone(), pseudonym: Some(label.clone()) }, None);
        if !res.is_success() {
            return Err(SimError::Setup(res.body.to_string()));
        }
        subs.push((label, field(&res.body, "participant_id"), field(&res.body, "token")));
    }

    let per_user = spec.participants.iter().any(|p| p.vicinity_m.is_some());
    let mut assets: Vec<(String, String, Asset)> = Vec::with_capacity(n);
    if per_user {
        for (plan, (_, pid, _)) in spec.participants.iter().zip(&subs) {
            let mut asset = base.clone();
            if let Some(v) = plan.vicinity_m {
                asset.questions.iter_mut().for_each(|q| q.vicinity_m = v);
            }
            let up = d.setup(t0, ApiRequest::UploadAsset { project_id: project.clone(), document: serialize_asset(&asset) })?;
            let asset_id = field(&up, "asset_id");
            let asg = d.setup(
                t0,
                ApiRequest::CreateAssignment {
                    asset_id: asset_id.clone(),
                    task_id: task_id.clone(),
                    participants: BTreeSet::from([pid.clone()]),
                },
            )?;
            assets.push((asset_id, field(&asg, "assignment_id"), asset));
        }
    } else {
        let up = d.setup(t0, ApiRequest::UploadAsset { project_id: project.clone(), document: spec.asset_document.clone() })?;
        let asset_id = field(&up, "asset_id");
        let asg = d.setup(
            t0,
            ApiRequest::CreateAssignment { asset_id: asset_id.clone(), task_id: task_id.clone(), participants: BTreeSet::new() },
        )?;
        let assignment = field(&asg, "assignment_id");
        assets.extend(std::iter::repeat_n((asset_id, assignment, base.clone()), n));
    }
    d.setup(t0, ApiRequest::ActivateTask { task_id: task_id.clone() })?;

    let mut clients = Vec::with_capacity(n);
    for (i, ((plan, (label, _pid, token)), (asset_id, assignment_id, asset))) in
        spec.participants.iter().zip(subs).zip(assets).enumerate()
    {
        clients.push(Client {
            label,
            token,
            assignment_id,
            asset_id,
            plans: plans_for_asset(&asset),
            asset,
            trace: generate_trace(&plan.trace)?,
            start: t0.plus_ms(spec.stagger_ms * i as i64),
            session_id: None,
            rng: ChaCha8Rng::seed_from_u64(participant_seed(spec.seed ^ 0x5eed, i)),
            inside: BTreeMap::new(),
            settled: BTreeSet::new(),
            answers: 0,
            last_tick: None,
            done: false,
        });
    }

    let mut queue: BinaryHeap<Reverse<(Timestamp, usize, Action)>> =
        clients.iter().enumerate().map(|(i, c)| Reverse((c.start, i, Action::Start))).collect();
    while let Some(Reverse((t, i, action))) = queue.pop() {
        let c = &mut clients[i];
        if c.done {
            continue;
        }
        match action {
            Action::Start => {
                let res = d.call(
                    t,
                    &c.label,
                    Some(&c.token),
                    ApiRequest::StartSession { assignment_id: c.assignment_id.clone() },
                    None,
                );
                if !res.is_success() {
                    c.done = true;
                    continue;
                }
                c.session_id = Some(field(&res.body, "session_id"));
                if let Some(p) = c.trace.first() {
                    queue.push(Reverse((c.start.plus_ms(p.offset_ms), i, Action::Tick(0))));
                }
            }
            Action::Tick(k) => {
                tick(&mut d, c, &spec.participants[i].policy, k, t)?;
                if !c.done {
                    if let Some(p) = c.trace.get(k + 1) {
                        queue.push(Reverse((c.start.plus_ms(p.offset_ms), i, Action::Tick(k + 1))));
                    }
                }
            }
        }
    }
    Ok(SimulationRun { log: d.log, service: d.svc, task_id })
}

fn tick(d: &mut Driver, c: &mut Client, policy: &super::BehaviorPolicy, k: usize, t: Timestamp) -> Result<(), SimError> {
    let session_id = c.session_id.clone().expect("started");
    let fix = c.trace[k];
    let res = d.call(
        t,
        &c.label,
        Some(&c.token),
        ApiRequest::PostLocation { session_id: session_id.clone(), lat: fix.point.lat_deg(), lon: fix.point.lon_deg() },
        None,
    );
    if !res.is_success() {
        if res.error_kind() == Some("SessionComplete") {
            c.done = true;
        }
        return Ok(());
    }
    let events: Vec<ZoneEvent> = serde_json::from_value(res.body["events"].clone()).unwrap_or_default();
    for e in events {
        match e {
            ZoneEvent::Entered(q) => {
                c.inside.insert(q, t);
            }
            ZoneEvent::Left(q) => {
                c.inside.remove(&q);
            }
        }
    }

    let samples = sensor_samples(c, &session_id, t, fix);
    c.last_tick = Some(t);
    if !samples.is_empty() {
        d.call(
            t,
            &c.label,
            Some(&c.token),
            ApiRequest::PostSensors { session_id: session_id.clone(), batch: write_sample_batch(&samples) },
            None,
        );
    }

    let ids = c.asset.ordered_ids();
    let target = fix.at_waypoint.and_then(|w| w.checked_sub(1)).and_then(|j| ids.get(j)).copied();
    let Some(q) = target.filter(|q| !c.settled.contains(q)) else { return Ok(()) };
    let question = c.asset.question(q).expect("ordered id").clone();
    let payload = policy.choose(&question, c.answers, &mut c.rng)?;
    let proof = match policy.proof {
        ProofStrategy::None => None,
        ProofStrategy::ValidToken => {
            let token = d.log.header.designer_token.clone();
            let ch = d.call(
                t,
                "designer",
                Some(&token),
                ApiRequest::IssueChallenge {
                    asset_id: c.asset_id.clone(),
                    question_id: q,
                    spec: ChallengeSpec::QrToken,
                    ttl_s: 600,
                },
                Some(format!("qr code displayed at question {q}")),
            );
            ch.is_success().then(|| ProofSubmission {
                challenge_id: field(&ch.body, "id"),
                response: ch.body["payload"]["token"].as_str().unwrap_or_default().to_string(),
            })
        }
    };
    let res = d.call(
        t,
        &c.label,
        Some(&c.token),
        ApiRequest::PostAnswer {
            session_id,
            question_id: q,
            payload,
            lat: fix.point.lat_deg(),
            lon: fix.point.lon_deg(),
            proof,
        },
        Some(format!("at point of interest {q}")),
    );
    if res.is_success() {
        c.answers += 1;
        c.settled.insert(q);
    } else if res.error_kind() != Some("NotLocalized") {
        c.settled.insert(q);
    }
    Ok(())
}

/// Readings for every plan whose zone the client is in, on the plan's period
/// grid from zone entry, covering the time since the previous fix.
fn sensor_samples(c: &mut Client, session_id: &str, now: Timestamp, fix: TracePoint) -> Vec<SensorSample> {
    let mut out = Vec::new();
    for plan in &c.plans {
        let Some(&entered) = c.inside.get(&plan.question_id) else { continue };
        let period = plan.period_ms() as i64;
        let end = now.min(entered.plus_ms(plan.duration_ms()));
        let from = c.last_tick.filter(|l| *l >= entered);
        let mut m = match from {
            Some(l) => (l.0 - entered.0) / period + 1,
            None => 0,
        };
        while entered.0 + m * period <= end.0 {
            let at = Timestamp(entered.0 + m * period);
            let values = match plan.kind {
                SensorKind::Location => vec![fix.point.lat_deg(), fix.point.lon_deg(), 5.0],
                SensorKind::Gyroscope | SensorKind::Accelerometer => {
                    (0..3).map(|_| c.rng.random_range(-1.0..1.0)).collect()
                }
                SensorKind::Light | SensorKind::Proximity | SensorKind::Noise => vec![c.rng.random_range(0.0..100.0)],
            };
            out.push(SensorSample {
                session: session_id.to_string(),
                kind: plan.kind,
                captured_at: at,
                values,
                lat: None,
                lon: None,
                accuracy: None,
            });
            m += 1;
        }
    }
    out.sort_by_key(|s| (s.captured_at, s.kind));
    out
}

pub struct ReplayOutcome {
    pub service: Service,
    /// Export of every task, keyed by task id.
    pub exports: BTreeMap<String, String>,
}

/// Re-issues every logged request against a fresh service and checks that
/// each response and each engine event matches the log.
pub fn replay(log: &SimulationLog) -> Result<ReplayOutcome, ReplayError> {
    let clock = VirtualClock::new(log.entries.first().map_or(Timestamp::EPOCH, |e| e.t));
    let svc = Service::new(sim_config(&log.header), Arc::new(clock.clone())).map_err(|e| ReplayError::Service(e.to_string()))?;
    for e in &log.entries {
        clock.set(e.t);
        let before = svc.state().seq;
        let response = svc.handle(e.bearer.as_deref(), e.request.clone());
        if response != e.response || svc.events_since(before) != e.events {
            return Err(ReplayError::DivergenceDetected(e.seq));
        }
    }
    let exports = {
        let st = svc.state();
        st.tasks.keys().map(|t| (t.clone(), st.export_task(t).expect("task exists"))).collect()
    };
    Ok(ReplayOutcome { service: svc, exports })
}
