//! Per-participant navigation state machine for the Simple, Sequential and
//! Dynamic modalities.
//!
//! A session is single-writer: every mutation goes through `&mut self`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::asset::{Asset, Mode, OptionId, PoiQuestion, QuestionId, QuestionType};
use crate::geo::{zone_contains, GeoPoint, LocalizationZone};
use crate::model::{Assignment, Participant, Task, TaskStatus};
use crate::presence::{Proof, Verdict};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModalityError {
    #[error("participant is not enrolled in this assignment")]
    NotEnrolled,
    #[error("assignment is not open for sessions")]
    AssignmentClosed,
    #[error("session is complete")]
    SessionComplete,
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("participant is not localized at question {0}")]
    NotLocalized(QuestionId),
    #[error("question {0} requires a verified presence proof")]
    ProofRequired(QuestionId),
    #[error("presence proof does not verify for question {0}")]
    ProofInvalid(QuestionId),
    #[error("question {0} already answered")]
    AlreadyAnswered(QuestionId),
    #[error("payload does not match question type: {0}")]
    PayloadMismatch(String),
    #[error("invalid zone for question {0}")]
    InvalidZone(QuestionId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoiStatus {
    Locked,
    Unlocked,
    Inside,
    Answered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerPayload {
    Options(Vec<OptionId>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: QuestionId,
    pub payload: AnswerPayload,
    pub answered_at: Timestamp,
    pub location: GeoPoint,
    pub proof_id: Option<String>,
    pub credits: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "question")]
pub enum ZoneEvent {
    Entered(QuestionId),
    Left(QuestionId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOutcome {
    pub question_id: QuestionId,
    pub credits: u32,
    pub unlocked: Option<QuestionId>,
    pub completed: bool,
    /// Numeric value forwarded to localized aggregation, when the answer has
    /// one (single choice scale position, or a numeric text answer).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSession {
    pub id: String,
    pub participant_id: String,
    pub assignment_id: String,
    pub task_id: String,
    pub asset: Asset,
    pub zones: BTreeMap<QuestionId, LocalizationZone>,
    pub poi_status: BTreeMap<QuestionId, PoiStatus>,
    /// Zones the participant is currently inside, with the entry time.
    pub present: BTreeMap<QuestionId, Timestamp>,
    pub answers: Vec<AnswerRecord>,
    pub credits_earned: u64,
    pub started_at: Timestamp,
    pub completed_at: Option<Timestamp>,
    pub terminal_reached: bool,
    pub last_location: Option<GeoPoint>,
}

/// Opens a session for `participant` on `assignment`, using the frozen asset.
pub fn start_session(
    session_id: String,
    assignment: &Assignment,
    task: &Task,
    participant: &Participant,
    asset: &Asset,
    now: Timestamp,
) -> Result<TaskSession, ModalityError> {
    if task.status != TaskStatus::Active || task.id != assignment.task_id {
        return Err(ModalityError::AssignmentClosed);
    }
    if !participant.projects.contains(&assignment.project_id) || !assignment.permits(&participant.id) {
        return Err(ModalityError::NotEnrolled);
    }
    TaskSession::new(session_id, participant.id.clone(), assignment.id.clone(), task.id.clone(), asset.clone(), now)
}

impl TaskSession {
    pub fn new(
        id: String,
        participant_id: String,
        assignment_id: String,
        task_id: String,
        asset: Asset,
        now: Timestamp,
    ) -> Result<Self, ModalityError> {
        let ids = asset.ordered_ids();
        let mut zones = BTreeMap::new();
        for &q in &ids {
            zones.insert(q, asset.zone_for(q).map_err(|_| ModalityError::InvalidZone(q))?);
        }
        let first = match asset.mode {
            Mode::Simple => None,
            Mode::Sequential => ids.first().copied(),
            Mode::Dynamic => asset.root_question(),
        };
        let poi_status = ids
            .iter()
            .map(|&q| {
                let unlocked = asset.mode == Mode::Simple || Some(q) == first;
                (q, if unlocked { PoiStatus::Unlocked } else { PoiStatus::Locked })
            })
            .collect();
        let mut s = TaskSession {
            id,
            participant_id,
            assignment_id,
            task_id,
            asset,
            zones,
            poi_status,
            present: BTreeMap::new(),
            answers: Vec::new(),
            credits_earned: 0,
            started_at: now,
            completed_at: None,
            terminal_reached: false,
            last_location: None,
        };
        if s.completion_holds() {
            s.completed_at = Some(now);
        }
        Ok(s)
    }

    pub fn is_complete(&self) -> bool {
        self.completed_at.is_some()
    }

    pub fn status(&self, q: QuestionId) -> Option<PoiStatus> {
        self.poi_status.get(&q).copied()
    }

    pub fn zone(&self, q: QuestionId) -> Option<&LocalizationZone> {
        self.zones.get(&q)
    }

    pub fn entered_at(&self, q: QuestionId) -> Option<Timestamp> {
        self.present.get(&q).copied()
    }

    /// Questions shown as reachable on the map: Unlocked or Inside.
    pub fn unlocked_pois(&self) -> BTreeSet<QuestionId> {
        self.poi_status
            .iter()
            .filter(|(_, s)| matches!(s, PoiStatus::Unlocked | PoiStatus::Inside))
            .map(|(&q, _)| q)
            .collect()
    }

    /// Applies a position fix. Unlocked questions whose zone now contains `p`
    /// become Inside (`Entered`); Inside questions whose zone no longer
    /// contains it revert to Unlocked (`Left`). Leaving the zone of a question
    /// answered during the current visit also yields `Left`.
    ///
    /// A complete session keeps reporting departures from the zones the
    /// participant is still in; once it has left them all, updates fail with
    /// `SessionComplete`.
    pub fn on_location_update(&mut self, p: GeoPoint, t: Timestamp) -> Result<Vec<ZoneEvent>, ModalityError> {
        if self.is_complete() && self.present.is_empty() {
            return Err(ModalityError::SessionComplete);
        }
        self.last_location = Some(p);
        let mut left = Vec::new();
        let mut entered = Vec::new();
        for (&q, status) in self.poi_status.iter_mut() {
            let inside = zone_contains(&self.zones[&q], p);
            let was_present = self.present.contains_key(&q);
            match *status {
                PoiStatus::Unlocked if inside && !was_present => {
                    *status = PoiStatus::Inside;
                    self.present.insert(q, t);
                    entered.push(ZoneEvent::Entered(q));
                }
                PoiStatus::Inside if !inside => {
                    *status = PoiStatus::Unlocked;
                    self.present.remove(&q);
                    left.push(ZoneEvent::Left(q));
                }
                PoiStatus::Answered if was_present && !inside => {
                    self.present.remove(&q);
                    left.push(ZoneEvent::Left(q));
                }
                _ => {}
            }
        }
        left.extend(entered);
        Ok(left)
    }

    fn question(&self, q: QuestionId) -> Result<&PoiQuestion, ModalityError> {
        self.asset.question(q).ok_or(ModalityError::UnknownQuestion(q))
    }

    /// Accepts an answer given at `location`; `now` is the engine clock.
    pub fn submit_answer(
        &mut self,
        qid: QuestionId,
        payload: AnswerPayload,
        location: GeoPoint,
        proof: Option<&Proof>,
        now: Timestamp,
    ) -> Result<AnswerOutcome, ModalityError> {
        if self.is_complete() {
            return Err(ModalityError::SessionComplete);
        }
        let question = self.question(qid)?.clone();
        match self.status(qid) {
            Some(PoiStatus::Answered) => return Err(ModalityError::AlreadyAnswered(qid)),
            Some(PoiStatus::Inside) => {}
            _ => return Err(ModalityError::NotLocalized(qid)),
        }
        if !zone_contains(&self.zones[&qid], location) {
            return Err(ModalityError::NotLocalized(qid));
        }
        let selected = check_payload(&question, &payload)?;

        let required = self.asset.proof_policy().requires(&question);
        let proof_id = match proof {
            None if required => return Err(ModalityError::ProofRequired(qid)),
            None => None,
            Some(p) if p.verdict != Verdict::Verified || p.question_id != qid => {
                return Err(ModalityError::ProofInvalid(qid))
            }
            Some(p) => Some(p.challenge_id.clone()),
        };

        let default = self.asset.default_credit;
        let credits: u32 = if selected.is_empty() {
            default
        } else {
            selected
                .iter()
                .map(|&o| question.option(o).and_then(|o| o.credits).unwrap_or(default))
                .sum()
        };

        let value = match (&payload, question.qtype) {
            (AnswerPayload::Options(_), QuestionType::Radio | QuestionType::Likert) => {
                question.option(selected[0]).map(|o| o.scale_position() as f64)
            }
            (AnswerPayload::Text(t), QuestionType::Textbox) => t.trim().parse::<f64>().ok().filter(|x| x.is_finite()),
            _ => None,
        };

        self.poi_status.insert(qid, PoiStatus::Answered);
        self.answers.push(AnswerRecord {
            question_id: qid,
            payload,
            answered_at: now,
            location,
            proof_id,
            credits,
        });
        self.credits_earned += credits as u64;

        let mut unlocked = None;
        match self.asset.mode {
            Mode::Simple => {}
            Mode::Sequential => {
                let ids = self.asset.ordered_ids();
                let pos = ids.iter().position(|&x| x == qid).expect("question exists");
                if let Some(&next) = ids.get(pos + 1) {
                    if self.status(next) == Some(PoiStatus::Locked) {
                        self.poi_status.insert(next, PoiStatus::Unlocked);
                        unlocked = Some(next);
                    }
                }
            }
            Mode::Dynamic => {
                // With several selected options the lowest option id decides.
                let next = selected
                    .iter()
                    .min()
                    .and_then(|&o| question.option(o))
                    .and_then(|o| o.next_question);
                match next.filter(|n| self.status(*n) == Some(PoiStatus::Locked)) {
                    Some(n) => {
                        self.poi_status.insert(n, PoiStatus::Unlocked);
                        unlocked = Some(n);
                    }
                    None => self.terminal_reached = true,
                }
            }
        }
        let completed = self.completion_holds();
        if completed {
            self.completed_at = Some(now);
        }
        Ok(AnswerOutcome { question_id: qid, credits, unlocked, completed, value })
    }

    /// Dynamic: the path reached a terminal option. Otherwise every mandatory
    /// question is answered (every question, when none is mandatory).
    fn completion_holds(&self) -> bool {
        if self.asset.mode == Mode::Dynamic {
            return self.terminal_reached;
        }
        let answered = |q: &PoiQuestion| self.status(q.id) == Some(PoiStatus::Answered);
        let mut mandatory = self.asset.questions.iter().filter(|q| q.mandatory).peekable();
        if mandatory.peek().is_some() {
            mandatory.all(answered)
        } else {
            self.asset.questions.iter().all(answered)
        }
    }
}

/// Returns the selected option ids (empty for text answers).
fn check_payload(q: &PoiQuestion, payload: &AnswerPayload) -> Result<Vec<OptionId>, ModalityError> {
    let mismatch = |m: &str| Err(ModalityError::PayloadMismatch(m.to_string()));
    match (q.qtype, payload) {
        (QuestionType::Textbox, AnswerPayload::Text(t)) => {
            if t.trim().is_empty() {
                mismatch("empty text answer")
            } else {
                Ok(Vec::new())
            }
        }
        (QuestionType::Textbox, _) => mismatch("textbox expects text"),
        (_, AnswerPayload::Text(_)) => mismatch("choice question expects option ids"),
        (qtype, AnswerPayload::Options(ids)) => {
            let distinct: BTreeSet<_> = ids.iter().copied().collect();
            if distinct.len() != ids.len() {
                return mismatch("repeated option id");
            }
            if let Some(bad) = ids.iter().find(|&&o| q.option(o).is_none()) {
                return Err(ModalityError::PayloadMismatch(format!("unknown option {bad}")));
            }
            match qtype {
                QuestionType::Checkbox if ids.is_empty() => mismatch("checkbox needs at least one option"),
                QuestionType::Radio | QuestionType::Likert if ids.len() != 1 => {
                    mismatch("single choice needs exactly one option")
                }
                _ => Ok(ids.clone()),
            }
        }
    }
}
