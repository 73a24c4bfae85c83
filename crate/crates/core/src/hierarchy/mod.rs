//! Centralized planning with decentralized execution: the manager turns a
//! task into sub-goals, groups agents, conductors execute sub-goals from their
//! own observation and actors follow conductor directives.

mod exec;
mod plan;
mod task;

use thiserror::Error;

pub use exec::{
    actor_act, conductor_execute, derive_subgoals, local_completion, ActorOutput, ConductorOutput, Directive,
    DirectiveKind, Endpoint, ExecContext, Message, Payload, PolicyHandle, ReportMsg, TrajectoryRecord, pooled_inventory,
};
pub use plan::{
    auto_organize, dry_run, manager_plan, partition, replan_on_failure, split_quantity, FailureMsg, FailureReason,
    FeasibilityReport, Group, Plan, PlanContext, Status, SubGoal, SubGoalKind, Target, MAX_AGENTS, RETRY_BUDGET,
};
pub use task::{GoalQuery, Intent, TaskSpec};

use crate::policy::PolicyError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("task has no goal")]
    EmptyTask,
    #[error("no agents available")]
    NoAgents,
    #[error("malformed task: {0}")]
    MalformedTask(String),
    #[error("build task without a blueprint")]
    MissingBlueprint,
    #[error("no sub-goal with id {0}")]
    UnknownSubGoal(usize),
    #[error("sub-goal dependencies form a cycle")]
    Cycle,
    #[error("policy cannot execute {0} sub-goals")]
    UnsupportedSubGoal(String),
    #[error("directive epoch {got} does not match current epoch {current}")]
    StaleDirective { got: u64, current: u64 },
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("no observation for agent {0}")]
    MissingObservation(u32),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

impl PlanError {
    pub fn kind(&self) -> &'static str {
        match self {
            PlanError::EmptyTask => "EmptyTask",
            PlanError::NoAgents => "NoAgents",
            PlanError::MalformedTask(_) => "MalformedTask",
            PlanError::MissingBlueprint => "MissingBlueprint",
            PlanError::UnknownSubGoal(_) => "UnknownSubGoal",
            PlanError::Cycle => "Cycle",
            PlanError::UnsupportedSubGoal(_) => "UnsupportedSubGoal",
            PlanError::StaleDirective { .. } => "StaleDirective",
            PlanError::InvalidMessage(_) => "InvalidMessage",
            PlanError::MissingObservation(_) => "MissingObservation",
            PlanError::Policy(e) => e.kind(),
        }
    }
}
