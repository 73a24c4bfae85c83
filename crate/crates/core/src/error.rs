use thiserror::Error;

use crate::distill::DistillError;
use crate::expert::ExpertError;
use crate::hierarchy::PlanError;
use crate::memory::MemoryError;
use crate::policy::PolicyError;
use crate::tasks::TaskError;
use crate::world::WorldError;

/// Umbrella error for callers that drive several subsystems at once.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl Error {
    /// Short machine-readable kind used by the CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::World(e) => e.kind(),
            Error::Plan(e) => e.kind(),
            Error::Policy(e) => e.kind(),
            Error::Distill(e) => e.kind(),
            Error::Expert(e) => e.kind(),
            Error::Memory(e) => e.kind(),
            Error::Task(e) => e.kind(),
        }
    }
}
