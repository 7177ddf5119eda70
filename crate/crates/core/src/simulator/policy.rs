//! Scripted participant behavior.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asset::{OptionId, PoiQuestion, QuestionId, QuestionType};
use crate::modality::AnswerPayload;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("categorical weights must be non-negative and sum to 1 (got {0})")]
    Weights(f64),
    #[error("scripted answers must not be empty")]
    EmptyScript,
    #[error("question {question}: {message}")]
    Mismatch { question: QuestionId, message: String },
    #[error("invalid question key {0:?}")]
    QuestionKey(String),
}

/// How a participant answers one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerRule {
    /// Always the same option id.
    Fixed(OptionId),
    /// Probabilities over the question's options, in listed order.
    Categorical(Vec<f64>),
    /// Option ids used in turn for successive answers of the participant.
    Scripted(Vec<OptionId>),
    /// Free text, for textbox questions.
    Text(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProofStrategy {
    #[default]
    None,
    /// Scan the QR code displayed at the point of interest before answering.
    ValidToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorPolicy {
    pub default: AnswerRule,
    /// Per-question rules keyed by question id.
    #[serde(default)]
    pub questions: BTreeMap<String, AnswerRule>,
    #[serde(default)]
    pub proof: ProofStrategy,
}

impl BehaviorPolicy {
    pub fn fixed(option: OptionId) -> Self {
        BehaviorPolicy { default: AnswerRule::Fixed(option), questions: BTreeMap::new(), proof: ProofStrategy::None }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        for (k, rule) in std::iter::once((&String::new(), &self.default)).chain(self.questions.iter()) {
            if !k.is_empty() && k.trim().parse::<QuestionId>().is_err() {
                return Err(PolicyError::QuestionKey(k.clone()));
            }
            match rule {
                AnswerRule::Categorical(w) => {
                    let sum: f64 = w.iter().sum();
                    if w.is_empty() || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(PolicyError::Weights(sum));
                    }
                }
                AnswerRule::Scripted(s) if s.is_empty() => return Err(PolicyError::EmptyScript),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn rule_for(&self, q: QuestionId) -> &AnswerRule {
        self.questions
            .iter()
            .find(|(k, _)| k.trim().parse::<QuestionId>().ok() == Some(q))
            .map(|(_, r)| r)
            .unwrap_or(&self.default)
    }

    /// The answer given to `q`; `answered_so_far` drives scripted rules.
    pub fn choose<R: Rng>(&self, q: &PoiQuestion, answered_so_far: usize, rng: &mut R) -> Result<AnswerPayload, PolicyError> {
        let mismatch = |message: &str| PolicyError::Mismatch { question: q.id, message: message.into() };
        let option = match (self.rule_for(q.id), q.qtype) {
            (AnswerRule::Text(t), QuestionType::Textbox) => return Ok(AnswerPayload::Text(t.clone())),
            (AnswerRule::Text(_), _) => return Err(mismatch("text rule on a choice question")),
            (_, QuestionType::Textbox) => return Err(mismatch("option rule on a textbox question")),
            (AnswerRule::Fixed(o), _) => *o,
            (AnswerRule::Scripted(s), _) => s[answered_so_far % s.len()],
            (AnswerRule::Categorical(w), _) => {
                if w.len() != q.options.len() {
                    return Err(mismatch("one weight per option required"));
                }
                let dist = WeightedIndex::new(w).map_err(|_| PolicyError::Weights(w.iter().sum()))?;
                q.options[dist.sample(rng)].id
            }
        };
        Ok(AnswerPayload::Options(vec![option]))
    }
}
