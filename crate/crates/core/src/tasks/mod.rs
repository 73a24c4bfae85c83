//! The five benchmark tasks, their metrics and the corridor training suite.

pub mod corridor;
mod metrics;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{code_fid, frechet_diagonal, rotation_histograms, voxel_iou, DiagonalGaussian};
pub use run::{
    fallback_slab, run_block_search, run_building_creation, run_episode, run_episode_traced, run_episode_with,
    run_goal_search, run_map_explore, run_material_collection, shared_expert, Controller, KIT_PER_MATERIAL,
};

use crate::distill::DistillError;
use crate::expert::ExpertError;
use crate::hierarchy::{GoalQuery, Intent, PlanError, TaskSpec};
use crate::world::{WorldConfig, WorldError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least 2 samples per side, got {a} and {b}")]
    InsufficientSamples { a: usize, b: usize },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Distill(#[from] DistillError),
}

impl TaskError {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskError::Config(_) => "ConfigError",
            TaskError::Shape(_) => "ShapeError",
            TaskError::InsufficientSamples { .. } => "InsufficientSamples",
            TaskError::World(e) => e.kind(),
            TaskError::Plan(e) => e.kind(),
            TaskError::Expert(e) => e.kind(),
            TaskError::Distill(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    GoalSearch,
    BlockSearch,
    MapExplore,
    MaterialCollect,
    BuildingCreate,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::GoalSearch,
        TaskKind::BlockSearch,
        TaskKind::MapExplore,
        TaskKind::MaterialCollect,
        TaskKind::BuildingCreate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::GoalSearch => "goal-search",
            TaskKind::BlockSearch => "block-search",
            TaskKind::MapExplore => "map-explore",
            TaskKind::MaterialCollect => "material-collect",
            TaskKind::BuildingCreate => "building-create",
        }
    }

    pub fn from_name(s: &str) -> Option<TaskKind> {
        TaskKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Iteration cap: 5 for map exploration, 100 otherwise.
    pub fn max_iterations(self) -> usize {
        match self {
            TaskKind::MapExplore => 5,
            _ => 100,
        }
    }

    pub fn default_goal(self) -> TaskSpec {
        TaskSpec::from_words(match self {
            TaskKind::GoalSearch => "find diamond",
            TaskKind::BlockSearch => "search diamond",
            TaskKind::MapExplore => "explore",
            TaskKind::MaterialCollect => "collect wood:4",
            TaskKind::BuildingCreate => "build pagoda",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub kind: TaskKind,
    pub seed: u64,
    pub agents: usize,
    /// Iteration cap.
    pub cap: usize,
    /// Conductor count handed to the manager; all agents when unset.
    pub groups: Option<usize>,
    /// Execution ticks per orchestration iteration.
    pub ticks_per_iteration: usize,
    pub goal: TaskSpec,
    pub world: WorldConfig,
}

/// Default execution ticks per iteration.
pub const TICKS_PER_ITERATION: usize = 10;

impl EpisodeConfig {
    pub fn new(kind: TaskKind, seed: u64, agents: usize) -> Self {
        EpisodeConfig {
            kind,
            seed,
            agents,
            cap: kind.max_iterations(),
            groups: None,
            ticks_per_iteration: TICKS_PER_ITERATION,
            goal: kind.default_goal(),
            world: WorldConfig::default(),
        }
    }

    pub fn with_goal(mut self, goal: TaskSpec) -> Self {
        self.goal = goal;
        self
    }

    pub fn conductors(&self) -> usize {
        self.groups.unwrap_or(self.agents).clamp(1, self.agents.max(1))
    }

    pub fn validate(&self) -> Result<Intent, TaskError> {
        let bad = |m: String| Err(TaskError::Config(m));
        if !(1..=8).contains(&self.agents) {
            return bad(format!("agents must be in 1..=8, got {}", self.agents));
        }
        if self.cap > self.kind.max_iterations() {
            return bad(format!("{} allows at most {} iterations, got {}", self.kind.name(), self.kind.max_iterations(), self.cap));
        }
        if self.ticks_per_iteration == 0 {
            return bad("ticks_per_iteration must be positive".into());
        }
        if self.groups == Some(0) {
            return bad("groups must be positive".into());
        }
        self.world.validate()?;
        let intent = self.goal.intent().map_err(|e| TaskError::Config(format!("goal: {e}")))?;
        let set = [self.goal.t_v.is_some(), self.goal.t_a.is_some(), self.goal.t_o.is_some()];
        let ok = match (self.kind, &intent) {
            (TaskKind::GoalSearch, Intent::Find(_)) => set.iter().filter(|s| **s).count() == 1,
            (TaskKind::BlockSearch, Intent::Search(_))
            | (TaskKind::MapExplore, Intent::Explore)
            | (TaskKind::MaterialCollect, Intent::Collect(_))
            | (TaskKind::BuildingCreate, Intent::Build { .. }) => true,
            _ => false,
        };
        if !ok {
            return bad(format!("goal {:?} does not fit task {}", self.goal.tokens(), self.kind.name()));
        }
        if let (TaskKind::GoalSearch, Intent::Find(GoalQuery::Image(g))) = (self.kind, &intent) {
            let side = crate::world::Observation::side();
            if g.width != side || g.height != side {
                return bad(format!("image goal must be {side}x{side}"));
            }
        }
        Ok(intent)
    }
}

/// Outcome of one episode. Metrics that do not apply to a task are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub iterations_used: usize,
    pub success: bool,
    pub blocks_found: usize,
    /// Explored column count.
    pub area: usize,
    pub completion: f64,
    pub iou: f64,
    pub code_fid: f64,
    /// The world cannot satisfy the collection bill.
    pub unsatisfiable: bool,
}

impl EpisodeResult {
    /// Column names in table order.
    pub const COLUMNS: [&'static str; 8] =
        ["iterations_used", "success", "blocks_found", "area", "completion", "iou", "code_fid", "unsatisfiable"];

    /// Tab-separated fields in [`Self::COLUMNS`] order.
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.iterations_used.to_string(),
            u8::from(self.success).to_string(),
            self.blocks_found.to_string(),
            self.area.to_string(),
            format!("{:.6}", self.completion),
            format!("{:.6}", self.iou),
            format!("{:.6}", self.code_fid),
            u8::from(self.unsatisfiable).to_string(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        let ok = EpisodeConfig::new(TaskKind::MapExplore, 1, 8);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.cap = 6;
        assert_eq!(c.validate().unwrap_err().kind(), "ConfigError");
        let c = EpisodeConfig::new(TaskKind::MapExplore, 1, 9);
        assert_eq!(c.validate().unwrap_err().kind(), "ConfigError");
        let c = EpisodeConfig::new(TaskKind::GoalSearch, 1, 1).with_goal(TaskSpec::from_words("find"));
        assert_eq!(c.validate().unwrap_err().kind(), "ConfigError");
        let mut two = TaskSpec::audio("music");
        two.t_o = Some(vec!["diamond".into()]);
        let c = EpisodeConfig::new(TaskKind::GoalSearch, 1, 1).with_goal(two);
        assert_eq!(c.validate().unwrap_err().kind(), "ConfigError");
        for k in TaskKind::ALL {
            assert_eq!(TaskKind::from_name(k.name()), Some(k));
            assert!(EpisodeConfig::new(k, 0, 1).validate().is_ok());
        }
    }
}
