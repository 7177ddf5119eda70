//! Witnessed-presence proofs: QR tokens, challenge questions and pluggable
//! puzzle verifiers.
//!
//! QR token wire format (80 characters, URL-safe base64 without padding):
//!
//! ```text
//! question_id u32 BE | nonce [16] | expiry_ms i64 BE | HMAC-SHA256 tag [32]
//! ```
//!
//! The tag covers the first 28 bytes. 60 bytes encode to exactly 80
//! characters with no spare bits, so every single-character change alters the
//! decoded bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::Sha256;

use crate::asset::{Asset, PoiQuestion, ProofPolicy, QuestionId};
use crate::time::Timestamp;

type HmacSha256 = Hmac<Sha256>;

const BODY_LEN: usize = 4 + 16 + 8;
const TOKEN_LEN: usize = BODY_LEN + 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PresenceError {
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("unknown challenge {0}")]
    UnknownChallenge(String),
    #[error("challenge already used")]
    AlreadyUsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChallengeKind {
    QrToken,
    ChallengeQuestion,
    Puzzle,
}

/// What the designer asks for when issuing a challenge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ChallengeSpec {
    QrToken,
    ChallengeQuestion { prompt: String, accepted: BTreeSet<String> },
    /// `spec["type"]` names the registered verifier.
    Puzzle { spec: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ChallengePayload {
    QrToken { token: String },
    ChallengeQuestion { prompt: String, accepted: BTreeSet<String> },
    Puzzle { spec: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Challenge {
    pub id: String,
    pub question_id: QuestionId,
    pub nonce: String,
    pub payload: ChallengePayload,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

impl Challenge {
    pub fn kind(&self) -> ChallengeKind {
        match self.payload {
            ChallengePayload::QrToken { .. } => ChallengeKind::QrToken,
            ChallengePayload::ChallengeQuestion { .. } => ChallengeKind::ChallengeQuestion,
            ChallengePayload::Puzzle { .. } => ChallengeKind::Puzzle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pending,
    Verified,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proof {
    pub challenge_id: String,
    pub question_id: QuestionId,
    pub response: String,
    pub submitted_at: Timestamp,
    pub verdict: Verdict,
}

/// Verifier callback for CAPTCHA-like puzzles.
pub trait PuzzleVerifier: Send + Sync {
    fn verify(&self, spec: &Value, response: &str) -> bool;
}

/// Whether an answer to `question` must carry a verified proof.
pub fn require_proof(question: &PoiQuestion, policy: &ProofPolicy) -> bool {
    policy.requires(question)
}

/// Contents of a decoded QR token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenClaims {
    pub question_id: QuestionId,
    pub nonce: [u8; 16],
    pub expires_at: Timestamp,
}

/// Signs and checks tokens under a deployment secret.
#[derive(Clone)]
pub struct TokenKey {
    secret: Vec<u8>,
}

impl std::fmt::Debug for TokenKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenKey(..)")
    }
}

impl TokenKey {
    pub fn new(secret: impl AsRef<[u8]>) -> Self {
        TokenKey { secret: secret.as_ref().to_vec() }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.secret).expect("HMAC accepts any key length")
    }

    pub fn tag(&self, data: &[u8]) -> [u8; 32] {
        let mut mac = self.mac();
        mac.update(data);
        mac.finalize().into_bytes().into()
    }

    pub fn sign(&self, claims: &TokenClaims) -> String {
        let mut bytes = Vec::with_capacity(TOKEN_LEN);
        bytes.extend_from_slice(&claims.question_id.to_be_bytes());
        bytes.extend_from_slice(&claims.nonce);
        bytes.extend_from_slice(&claims.expires_at.0.to_be_bytes());
        let tag = self.tag(&bytes);
        bytes.extend_from_slice(&tag);
        URL_SAFE_NO_PAD.encode(bytes)
    }

    /// Decodes a token and checks its tag. Expiry is not checked here.
    pub fn open(&self, token: &str) -> Option<TokenClaims> {
        let bytes = URL_SAFE_NO_PAD.decode(token.trim()).ok()?;
        if bytes.len() != TOKEN_LEN {
            return None;
        }
        let (body, tag) = bytes.split_at(BODY_LEN);
        let mut mac = self.mac();
        mac.update(body);
        mac.verify_slice(tag).ok()?;
        let question_id = u32::from_be_bytes(body[0..4].try_into().ok()?);
        let nonce: [u8; 16] = body[4..20].try_into().ok()?;
        let expires_at = Timestamp(i64::from_be_bytes(body[20..28].try_into().ok()?));
        Some(TokenClaims { question_id, nonce, expires_at })
    }

    /// Deterministic, secret-keyed nonce for the `counter`-th challenge.
    fn nonce(&self, counter: u64) -> [u8; 16] {
        let mut data = b"nonce:".to_vec();
        data.extend_from_slice(&counter.to_be_bytes());
        let tag = self.tag(&data);
        tag[..16].try_into().expect("16 bytes")
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn fold_answer(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Serializable challenge state: issued challenges and consumed nonces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChallengeStore {
    pub issued: u64,
    pub challenges: BTreeMap<String, Challenge>,
    pub consumed: BTreeSet<String>,
}

impl ChallengeStore {
    pub fn record(&mut self, ch: Challenge) {
        self.issued += 1;
        self.challenges.insert(ch.id.clone(), ch);
    }

    pub fn consume(&mut self, ch: &Challenge) {
        self.consumed.insert(ch.nonce.clone());
    }

    pub fn is_consumed(&self, ch: &Challenge) -> bool {
        self.consumed.contains(&ch.nonce)
    }
}

/// Issues and verifies challenges. Callers needing concurrent access wrap it
/// in a mutex; `verify` decides and consumes in one `&mut self` call.
pub struct PresenceRegistry {
    key: TokenKey,
    pub store: ChallengeStore,
    puzzles: HashMap<String, Arc<dyn PuzzleVerifier>>,
}

impl PresenceRegistry {
    pub fn new(key: TokenKey) -> Self {
        PresenceRegistry { key, store: ChallengeStore::default(), puzzles: HashMap::new() }
    }

    pub fn key(&self) -> &TokenKey {
        &self.key
    }

    pub fn register_puzzle(&mut self, name: impl Into<String>, verifier: Arc<dyn PuzzleVerifier>) {
        self.puzzles.insert(name.into(), verifier);
    }

    pub fn challenge(&self, id: &str) -> Option<&Challenge> {
        self.store.challenges.get(id)
    }

    /// Builds the next challenge without recording it.
    pub fn prepare(
        &self,
        asset: &Asset,
        question_id: QuestionId,
        spec: ChallengeSpec,
        ttl_s: u64,
        now: Timestamp,
    ) -> Result<Challenge, PresenceError> {
        self.prepare_in(&self.store, asset, question_id, spec, ttl_s, now)
    }

    /// Like [`prepare`](Self::prepare), numbering from an external store.
    pub fn prepare_in(
        &self,
        store: &ChallengeStore,
        asset: &Asset,
        question_id: QuestionId,
        spec: ChallengeSpec,
        ttl_s: u64,
        now: Timestamp,
    ) -> Result<Challenge, PresenceError> {
        if asset.question(question_id).is_none() {
            return Err(PresenceError::UnknownQuestion(question_id));
        }
        let counter = store.issued + 1;
        let nonce = self.key.nonce(counter);
        let expires_at = now.plus_secs(ttl_s as i64);
        let payload = match spec {
            ChallengeSpec::QrToken => ChallengePayload::QrToken {
                token: self.key.sign(&TokenClaims { question_id, nonce, expires_at }),
            },
            ChallengeSpec::ChallengeQuestion { prompt, accepted } => ChallengePayload::ChallengeQuestion {
                prompt,
                accepted: accepted.iter().map(|a| fold_answer(a)).collect(),
            },
            ChallengeSpec::Puzzle { spec } => ChallengePayload::Puzzle { spec },
        };
        Ok(Challenge {
            id: format!("chl-{counter}"),
            question_id,
            nonce: hex(&nonce),
            payload,
            issued_at: now,
            expires_at,
        })
    }

    /// Records a prepared challenge.
    pub fn record(&mut self, ch: Challenge) {
        self.store.record(ch);
    }

    pub fn issue_challenge(
        &mut self,
        asset: &Asset,
        question_id: QuestionId,
        spec: ChallengeSpec,
        ttl_s: u64,
        now: Timestamp,
    ) -> Result<Challenge, PresenceError> {
        let ch = self.prepare(asset, question_id, spec, ttl_s, now)?;
        self.record(ch.clone());
        Ok(ch)
    }

    /// Pure decision; does not consume the nonce.
    pub fn check(&self, ch: &Challenge, response: &str, now: Timestamp) -> Result<Verdict, PresenceError> {
        self.check_in(&self.store, ch, response, now)
    }

    /// Decides against the consumed nonces of an external store.
    pub fn check_in(&self, store: &ChallengeStore, ch: &Challenge, response: &str, now: Timestamp) -> Result<Verdict, PresenceError> {
        if store.consumed.contains(&ch.nonce) {
            return Err(PresenceError::AlreadyUsed);
        }
        if now > ch.expires_at {
            return Ok(Verdict::Rejected);
        }
        let ok = match &ch.payload {
            ChallengePayload::QrToken { .. } => match self.key.open(response) {
                Some(claims) => {
                    claims.question_id == ch.question_id
                        && hex(&claims.nonce) == ch.nonce
                        && now <= claims.expires_at
                }
                None => false,
            },
            ChallengePayload::ChallengeQuestion { accepted, .. } => accepted.contains(&fold_answer(response)),
            ChallengePayload::Puzzle { spec } => spec
                .get("type")
                .and_then(Value::as_str)
                .and_then(|name| self.puzzles.get(name))
                .map(|v| v.verify(spec, response))
                .unwrap_or(false),
        };
        Ok(if ok { Verdict::Verified } else { Verdict::Rejected })
    }

    pub fn consume(&mut self, ch: &Challenge) {
        self.store.consume(ch);
    }

    /// Decides a proof for `ch`. A verified challenge is consumed and cannot
    /// be presented again.
    pub fn verify(&mut self, ch: &Challenge, response: &str, now: Timestamp) -> Result<Verdict, PresenceError> {
        let verdict = self.check(ch, response, now)?;
        if verdict == Verdict::Verified {
            self.consume(ch);
        }
        Ok(verdict)
    }

    pub fn verify_by_id(&mut self, challenge_id: &str, response: &str, now: Timestamp) -> Result<Proof, PresenceError> {
        let ch = self
            .store
            .challenges
            .get(challenge_id)
            .cloned()
            .ok_or_else(|| PresenceError::UnknownChallenge(challenge_id.to_string()))?;
        let verdict = self.verify(&ch, response, now)?;
        Ok(Proof {
            challenge_id: ch.id.clone(),
            question_id: ch.question_id,
            response: response.to_string(),
            submitted_at: now,
            verdict,
        })
    }
}
