//! Sensor sampling plans and the gate that admits or drops incoming samples.
//!
//! Batch upload format: one JSON object per line,
//!
//! ```text
//! {"session": "ses-1", "kind": "gyroscope", "captured_at": 1612878327250,
//!  "values": [0.01, -0.02, 0.0], "lat": 47.37, "lon": 8.53, "accuracy": 4.0}
//! ```
//!
//! `captured_at` is milliseconds since the epoch or an ISO-8601 string.
//! `lat`/`lon`/`accuracy` are optional. Value arity per kind:
//!
//! | kind          | values                 |
//! |---------------|------------------------|
//! | light         | 1 (lux)                |
//! | gyroscope     | 3 (rad/s)              |
//! | proximity     | 1 (cm)                 |
//! | accelerometer | 3 (m/s²)               |
//! | location      | 2 (deg) + accuracy (m) |
//! | noise         | 1 (dB)                 |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::asset::{Asset, Frequency, PoiQuestion, QuestionId, SensorKind};
use crate::geo::{zone_contains, GeoPoint, LocalizationZone};
use crate::modality::TaskSession;
use crate::time::Timestamp;

/// Zones at least this wide collect passively and continuously.
pub const PASSIVE_RADIUS_M: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub question_id: QuestionId,
    pub kind: SensorKind,
    frequency: Frequency,
    pub duration_min: f64,
    pub zone: LocalizationZone,
}

impl SamplingPlan {
    pub fn new(question_id: QuestionId, kind: SensorKind, frequency: Frequency, duration_min: f64, zone: LocalizationZone) -> Self {
        SamplingPlan { question_id, kind, frequency, duration_min: duration_min.max(0.0), zone }
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    /// One of 2000, 250 or 200 ms.
    pub fn period_ms(&self) -> u32 {
        self.frequency.period_ms()
    }

    pub fn duration_ms(&self) -> i64 {
        (self.duration_min * 60_000.0).round() as i64
    }

    /// Upper bound on accepted samples per zone visit.
    pub fn budget(&self) -> u64 {
        (self.duration_ms() as u64).div_ceil(self.period_ms() as u64) + 1
    }
}

pub fn zone_is_passive(zone: &LocalizationZone) -> bool {
    match *zone {
        LocalizationZone::Circle { radius_m, .. } => radius_m >= PASSIVE_RADIUS_M,
        LocalizationZone::Ellipse { semi_minor_m, .. } => semi_minor_m >= PASSIVE_RADIUS_M,
    }
}

pub fn passive_mode(plan: &SamplingPlan) -> bool {
    zone_is_passive(&plan.zone)
}

/// One plan per configured sensor, gated by the question's zone.
pub fn plans_for_question(asset: &Asset, q: &PoiQuestion) -> Vec<SamplingPlan> {
    let zone = match asset.zone_for(q.id) {
        Ok(z) => z,
        Err(_) => return Vec::new(),
    };
    q.sensors
        .iter()
        .map(|s| SamplingPlan::new(q.id, s.kind, q.frequency, q.time_min, zone))
        .collect()
}

pub fn plans_for_asset(asset: &Asset) -> Vec<SamplingPlan> {
    asset.questions.iter().flat_map(|q| plans_for_question(asset, q)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub session: String,
    pub kind: SensorKind,
    pub captured_at: Timestamp,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

impl SensorSample {
    pub fn location(&self) -> Option<GeoPoint> {
        match (self.lat, self.lon) {
            (Some(la), Some(lo)) => GeoPoint::new(la, lo).ok(),
            _ => None,
        }
    }

    fn has_valid_position(&self) -> bool {
        match (self.lat, self.lon) {
            (None, None) => true,
            (Some(_), Some(_)) => self.location().is_some(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct BatchError {
    pub line: usize,
    pub message: String,
}

pub fn parse_sample_batch(text: &str) -> Result<Vec<SensorSample>, BatchError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| BatchError { line: i + 1, message: e.to_string() }))
        .collect()
}

pub fn write_sample_batch(samples: &[SensorSample]) -> String {
    samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("sample serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    OutsideZone,
    Expired,
    TooFrequent,
    WrongArity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateDecision {
    Accept,
    Drop(DropReason),
}

/// Per (session, question, kind) stream bookkeeping for one zone visit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub window_start: Option<Timestamp>,
    pub last_accepted: Option<Timestamp>,
    pub accepted: u64,
}

impl StreamState {
    /// View of the stream for the visit that began at `entered_at`; a new
    /// visit starts empty.
    fn for_window(&self, entered_at: Timestamp) -> StreamState {
        if self.window_start == Some(entered_at) {
            *self
        } else {
            StreamState { window_start: Some(entered_at), last_accepted: None, accepted: 0 }
        }
    }

    pub fn record_accept(&mut self, entered_at: Timestamp, captured_at: Timestamp) {
        let mut next = self.for_window(entered_at);
        next.last_accepted = Some(captured_at);
        next.accepted += 1;
        *self = next;
    }
}

/// Decides whether `sample` belongs to `plan` for the current zone visit.
///
/// Accepted iff the session is inside the plan's zone, the sample lies within
/// the collection window that opened on entry, and it is spaced at least half
/// a period after the previous accepted sample (with at most
/// [`SamplingPlan::budget`] samples per visit).
pub fn gate_sample(plan: &SamplingPlan, session: &TaskSession, sample: &SensorSample, stream: &StreamState) -> GateDecision {
    if sample.kind != plan.kind || !plan.kind.arity().contains(&sample.values.len()) || !sample.has_valid_position() {
        return GateDecision::Drop(DropReason::WrongArity);
    }
    if sample.values.iter().any(|v| !v.is_finite()) {
        return GateDecision::Drop(DropReason::WrongArity);
    }
    let entered_at = match session.entered_at(plan.question_id) {
        Some(t) => t,
        None => return GateDecision::Drop(DropReason::OutsideZone),
    };
    if sample.captured_at < entered_at {
        return GateDecision::Drop(DropReason::OutsideZone);
    }
    if let Some(p) = sample.location() {
        if !zone_contains(&plan.zone, p) {
            return GateDecision::Drop(DropReason::OutsideZone);
        }
    }
    if sample.captured_at > entered_at.plus_ms(plan.duration_ms()) {
        return GateDecision::Drop(DropReason::Expired);
    }
    let stream = stream.for_window(entered_at);
    if let Some(last) = stream.last_accepted {
        // Twice the gap avoids rounding half of an odd period.
        if 2 * (sample.captured_at.0 - last.0) < plan.period_ms() as i64 {
            return GateDecision::Drop(DropReason::TooFrequent);
        }
    }
    if stream.accepted >= plan.budget() {
        return GateDecision::Drop(DropReason::TooFrequent);
    }
    GateDecision::Accept
}

/// Routes samples of one session to its plans and keeps stream state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleGate {
    streams: BTreeMap<String, StreamState>,
}

impl SampleGate {
    fn key(session: &str, q: QuestionId, kind: SensorKind) -> String {
        format!("{session}/{q}/{kind}")
    }

    /// Offers the sample to each plan of its kind whose zone the session is
    /// in, lowest question id first.
    pub fn ingest(&mut self, plans: &[SamplingPlan], session: &TaskSession, sample: &SensorSample) -> (Option<QuestionId>, GateDecision) {
        let mut decision = GateDecision::Drop(DropReason::OutsideZone);
        let mut candidates: Vec<&SamplingPlan> = plans.iter().filter(|p| p.kind == sample.kind).collect();
        candidates.sort_by_key(|p| p.question_id);
        if candidates.is_empty() {
            return (None, GateDecision::Drop(DropReason::WrongArity));
        }
        for plan in candidates {
            let key = Self::key(&session.id, plan.question_id, plan.kind);
            let stream = self.streams.get(&key).copied().unwrap_or_default();
            match gate_sample(plan, session, sample, &stream) {
                GateDecision::Accept => {
                    let entered = session.entered_at(plan.question_id).expect("accepted inside");
                    self.streams.entry(key).or_default().record_accept(entered, sample.captured_at);
                    return (Some(plan.question_id), GateDecision::Accept);
                }
                GateDecision::Drop(DropReason::OutsideZone) => {}
                other => decision = other,
            }
        }
        (None, decision)
    }
}
