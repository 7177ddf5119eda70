use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Asset, Mode, QuestionId, QuestionType};
use crate::sensing;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub path: String,
    pub message: String,
}

/// Violations make an asset unusable; notes are informational.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub notes: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding { path: path.into(), message: message.into() });
    }

    pub fn has_message(&self, needle: &str) -> bool {
        self.findings.iter().any(|f| f.message.contains(needle))
    }
}

pub fn validate_asset(a: &Asset) -> ValidationReport {
    let mut report = ValidationReport::default();
    if a.questions.is_empty() {
        report.push("SampleDataModel", "asset has no questions");
        return report;
    }

    let mut seen = BTreeSet::new();
    for (i, q) in a.questions.iter().enumerate() {
        if !seen.insert(q.id) {
            report.push(format!("SampleDataModel[{i}].id"), format!("duplicate question id {}", q.id));
        }
    }
    let ids: BTreeSet<QuestionId> = seen;

    for (i, q) in a.questions.iter().enumerate() {
        let base = format!("SampleDataModel[{i}]");
        if q.vicinity_m <= 0.0 {
            report.push(format!("{base}.Vicinity"), "vicinity must be positive");
        }
        if q.qtype.is_choice() && q.options.len() < 2 {
            report.push(format!("{base}.Option"), format!("{:?} question needs at least 2 options", q.qtype));
        }
        let mut option_ids = BTreeSet::new();
        for (j, o) in q.options.iter().enumerate() {
            if !option_ids.insert(o.id) {
                report.push(format!("{base}.Option[{j}].id"), format!("duplicate option id {}", o.id));
            }
            if let Some(next) = o.next_question {
                if !ids.contains(&next) {
                    report.push(format!("{base}.Option[{j}].NextQuestion"), format!("dangling NextQuestion {next}"));
                }
            }
        }
        let mut kinds = BTreeSet::new();
        for (j, s) in q.sensors.iter().enumerate() {
            if !kinds.insert(s.kind) {
                report.push(format!("{base}.Sensor[{j}]"), format!("duplicate sensor {}", s.kind));
            }
        }
        if q.qtype == QuestionType::Likert {
            let positions: Vec<i64> = q.options.iter().map(|o| o.scale_position()).collect();
            if positions.windows(2).any(|w| w[1] != w[0] + 1) {
                report.push(format!("{base}.Option"), "likert options do not form a linear scale");
            }
        }
        if let Ok(zone) = a.zone_for(q.id) {
            if sensing::zone_is_passive(&zone) && !q.sensors.is_empty() {
                report.notes.push(Finding {
                    path: format!("{base}.Vicinity"),
                    message: "continuous passive sensing configuration".into(),
                });
            }
        }
    }

    match a.mode {
        Mode::Dynamic => {
            let edges: BTreeMap<QuestionId, Vec<QuestionId>> = a
                .questions
                .iter()
                .map(|q| (q.id, q.options.iter().filter_map(|o| o.next_question).collect()))
                .collect();
            if let Some(root) = a.root_question() {
                let mut reached = BTreeSet::from([root]);
                let mut queue = VecDeque::from([root]);
                while let Some(cur) = queue.pop_front() {
                    for &n in edges.get(&cur).into_iter().flatten() {
                        if ids.contains(&n) && reached.insert(n) {
                            queue.push_back(n);
                        }
                    }
                }
                for (i, q) in a.questions.iter().enumerate() {
                    if !reached.contains(&q.id) {
                        report.push(format!("SampleDataModel[{i}]"), format!("unreachable question {}", q.id));
                    }
                }
            }
        }
        Mode::Sequential => {
            // Explicit NextQuestion links must agree with ascending id order.
            let order = a.ordered_ids();
            for (i, q) in a.questions.iter().enumerate() {
                let expected = order.iter().position(|&x| x == q.id).and_then(|p| order.get(p + 1)).copied();
                for (j, o) in q.options.iter().enumerate() {
                    if let Some(next) = o.next_question {
                        if Some(next) != expected && ids.contains(&next) {
                            report.push(
                                format!("SampleDataModel[{i}].Option[{j}].NextQuestion"),
                                format!("NextQuestion {next} breaks the sequential order"),
                            );
                        }
                    }
                }
            }
        }
        Mode::Simple => {}
    }
    report
}
