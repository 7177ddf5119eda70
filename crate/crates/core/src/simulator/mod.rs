//! Simulated participants driving the service end to end on virtual time.

mod cohort;
mod policy;
mod scenario;
mod trace;

pub use cohort::{
    replay, run_cohort, LogEntry, LogHeader, ReplayError, ReplayOutcome, SimError, SimulationLog, SimulationRun,
    SIM_DESIGNER, SIM_DESIGNER_TOKEN, SIM_SECRET,
};
pub use policy::{AnswerRule, BehaviorPolicy, PolicyError, ProofStrategy};
pub use scenario::{CohortSpec, ParticipantOverride, ParticipantPlan, Scenario, ScenarioError, TraceConfig};
pub use trace::{generate_trace, TraceError, TracePoint, TraceSpec};
