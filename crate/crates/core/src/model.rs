//! Projects, tasks, assignments and participants.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::asset::Asset;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub name: String,
    pub owner: String,
    pub auto_assign: bool,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Draft,
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub project_id: String,
    pub name: String,
    pub created_at: Timestamp,
    pub status: TaskStatus,
}

/// Binds one asset and one task to participants. An empty participant set
/// means open enrollment: every participant of the project may join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: String,
    pub project_id: String,
    pub asset_id: String,
    pub task_id: String,
    pub participants: BTreeSet<String>,
    pub created_at: Timestamp,
    /// Asset frozen when the task is activated.
    pub snapshot: Option<Asset>,
}

impl Assignment {
    pub fn is_open(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn permits(&self, participant_id: &str) -> bool {
        self.is_open() || self.participants.contains(participant_id)
    }
}

/// Pseudonymous participant; carries no real-world identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub pseudonym: String,
    pub projects: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("project {0} has no task")]
    NoTask(String),
    #[error("project {0} does not auto-assign")]
    AutoAssignDisabled(String),
    #[error("asset and task belong to different projects")]
    CrossProject,
}

/// Links an asset to the project's most recently created task, open to all
/// participants. `tasks` is in creation order; on equal timestamps the later
/// one wins.
pub fn auto_assign<'a>(
    project: &Project,
    tasks: impl IntoIterator<Item = &'a Task>,
    asset_id: &str,
    assignment_id: String,
    now: Timestamp,
) -> Result<Assignment, ModelError> {
    if !project.auto_assign {
        return Err(ModelError::AutoAssignDisabled(project.id.clone()));
    }
    let task = tasks
        .into_iter()
        .filter(|t| t.project_id == project.id)
        .max_by_key(|t| t.created_at)
        .ok_or_else(|| ModelError::NoTask(project.id.clone()))?;
    Ok(Assignment {
        id: assignment_id,
        project_id: project.id.clone(),
        asset_id: asset_id.to_string(),
        task_id: task.id.clone(),
        participants: BTreeSet::new(),
        created_at: now,
        snapshot: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project() -> Project {
        Project {
            id: "prj-1".into(),
            name: "cycling".into(),
            owner: "designer".into(),
            auto_assign: true,
            created_at: Timestamp(0),
        }
    }

    fn task(id: &str, t: i64) -> Task {
        Task {
            id: id.into(),
            project_id: "prj-1".into(),
            name: id.into(),
            created_at: Timestamp(t),
            status: TaskStatus::Draft,
        }
    }

    #[test]
    fn picks_most_recent_task() {
        let tasks = [task("T1", 10), task("T2", 20)];
        let a = auto_assign(&project(), &tasks, "ast-1", "asg-1".into(), Timestamp(30)).unwrap();
        assert_eq!(a.task_id, "T2");
        assert!(a.is_open());
        assert!(a.permits("anyone"));
    }

    #[test]
    fn single_task_and_ties() {
        let a = auto_assign(&project(), &[task("T1", 10)], "ast-1", "asg-1".into(), Timestamp(30)).unwrap();
        assert_eq!(a.task_id, "T1");
        let tasks = [task("T1", 10), task("T2", 10)];
        let a = auto_assign(&project(), &tasks, "ast-1", "asg-1".into(), Timestamp(30)).unwrap();
        assert_eq!(a.task_id, "T2");
    }

    #[test]
    fn no_task() {
        let err = auto_assign(&project(), &[], "ast-1", "asg-1".into(), Timestamp(30)).unwrap_err();
        assert_eq!(err, ModelError::NoTask("prj-1".into()));
    }
}
