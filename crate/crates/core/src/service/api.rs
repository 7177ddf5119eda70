//! Transport-independent request and response types.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::asset::{AssetError, QuestionId, ValidationReport};
use crate::modality::{AnswerPayload, ModalityError};
use crate::presence::ChallengeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProofSubmission {
    pub challenge_id: String,
    pub response: String,
}

/// Every operation the REST API offers, one variant per route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ApiRequest {
    CreateProject {
        name: String,
        #[serde(default)]
        auto_assign: bool,
    },
    GetProject { project_id: String },
    UploadAsset { project_id: String, document: String },
    ReplaceAsset { asset_id: String, document: String },
    GetAsset { asset_id: String },
    CreateTask { project_id: String, name: String },
    ActivateTask { task_id: String },
    CloseTask { task_id: String },
    CreateAssignment {
        asset_id: String,
        task_id: String,
        #[serde(default)]
        participants: BTreeSet<String>,
    },
    CreateAccessCode {
        project_id: String,
        #[serde(default)]
        max_uses: Option<u32>,
        #[serde(default)]
        ttl_s: Option<u64>,
    },
    IssueChallenge { asset_id: String, question_id: QuestionId, spec: ChallengeSpec, ttl_s: u64 },
    Subscribe {
        code: String,
        #[serde(default)]
        pseudonym: Option<String>,
    },
    ListTasks { participant_id: String },
    StartSession { assignment_id: String },
    GetSession { session_id: String },
    PostLocation { session_id: String, lat: f64, lon: f64 },
    PostAnswer {
        session_id: String,
        question_id: QuestionId,
        payload: AnswerPayload,
        lat: f64,
        lon: f64,
        #[serde(default)]
        proof: Option<ProofSubmission>,
    },
    /// `batch` is newline-delimited sensor samples.
    PostSensors { session_id: String, batch: String },
    GetAggregate { task_id: String, function: String },
    Export { task_id: String },
}

impl ApiRequest {
    pub fn mutates(&self) -> bool {
        !matches!(
            self,
            ApiRequest::GetProject { .. }
                | ApiRequest::GetAsset { .. }
                | ApiRequest::ListTasks { .. }
                | ApiRequest::GetSession { .. }
                | ApiRequest::GetAggregate { .. }
                | ApiRequest::Export { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    pub fn ok(body: Value) -> Self {
        ApiResponse { status: 200, body }
    }

    pub fn created(body: Value) -> Self {
        ApiResponse { status: 201, body }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// The `error` field of a failure body.
    pub fn error_kind(&self) -> Option<&str> {
        self.body.get("error").and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ApiError {
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("{1}")]
    Forbidden(&'static str, String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{1}")]
    BadRequest(&'static str, String),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("asset has {} validation finding(s)", .0.findings.len())]
    Validation(ValidationReport),
    #[error("{1}")]
    Conflict(&'static str, String),
    #[error(transparent)]
    Modality(#[from] ModalityError),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::Unauthorized => 401,
            ApiError::Forbidden(..) => 403,
            ApiError::NotFound(_) => 404,
            ApiError::BadRequest(..) | ApiError::Asset(_) | ApiError::Validation(_) => 400,
            ApiError::Conflict(..) => 409,
            ApiError::Modality(e) => match e {
                ModalityError::NotEnrolled | ModalityError::ProofRequired(_) | ModalityError::ProofInvalid(_) => 403,
                ModalityError::UnknownQuestion(_) => 404,
                ModalityError::PayloadMismatch(_) | ModalityError::InvalidZone(_) => 422,
                ModalityError::AssignmentClosed
                | ModalityError::SessionComplete
                | ModalityError::NotLocalized(_)
                | ModalityError::AlreadyAnswered(_) => 409,
            },
            ApiError::Internal(_) => 500,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ApiError::Unauthorized => "Unauthorized",
            ApiError::Forbidden(k, _) | ApiError::BadRequest(k, _) | ApiError::Conflict(k, _) => k,
            ApiError::NotFound(_) => "NotFound",
            ApiError::Asset(AssetError::Syntax { .. }) => "SyntaxError",
            ApiError::Asset(AssetError::Schema { .. }) => "SchemaError",
            ApiError::Asset(AssetError::Range { .. }) => "RangeError",
            ApiError::Validation(_) => "ValidationFailed",
            ApiError::Modality(e) => match e {
                ModalityError::NotEnrolled => "NotEnrolled",
                ModalityError::AssignmentClosed => "AssignmentClosed",
                ModalityError::SessionComplete => "SessionComplete",
                ModalityError::UnknownQuestion(_) => "UnknownQuestion",
                ModalityError::NotLocalized(_) => "NotLocalized",
                ModalityError::ProofRequired(_) => "ProofRequired",
                ModalityError::ProofInvalid(_) => "ProofInvalid",
                ModalityError::AlreadyAnswered(_) => "AlreadyAnswered",
                ModalityError::PayloadMismatch(_) => "PayloadMismatch",
                ModalityError::InvalidZone(_) => "InvalidZone",
            },
            ApiError::Internal(_) => "Internal",
        }
    }

    pub fn into_response(self) -> ApiResponse {
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        match &self {
            ApiError::Asset(e) => {
                if let Some(p) = e.path() {
                    body["path"] = json!(p);
                }
            }
            ApiError::Validation(r) => body["findings"] = json!(r.findings),
            _ => {}
        }
        ApiResponse { status: self.status(), body }
    }
}
