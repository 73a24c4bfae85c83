//! TOML run configuration with sections `world`, `agents`, `teacher`,
//! `distill`, `tasks` and `seeds`. Every key is optional.

use std::path::Path;

use serde::Deserialize;
use voxhive::distill::DistillConfig;
use voxhive::policy::{TeacherConfig, TeacherMode};
use voxhive::tasks::corridor::{CorridorConfig, HELD_OUT_SEED_BASE, TRAIN_SEED_BASE};
use voxhive::world::WorldConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub agents: AgentsSection,
    pub teacher: TeacherSection,
    pub distill: DistillConfig,
    pub tasks: TasksSection,
    pub seeds: SeedsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsSection {
    /// Team sizes to evaluate; each gets its own rows.
    pub counts: Vec<usize>,
    /// Conductor count handed to the manager.
    pub groups: Option<usize>,
    pub ticks_per_iteration: usize,
}

impl Default for AgentsSection {
    fn default() -> Self {
        AgentsSection { counts: vec![1], groups: None, ticks_per_iteration: voxhive::tasks::TICKS_PER_ITERATION }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    /// Teacher cloned by `train-ref`.
    pub demo: String,
    /// Teacher queried by `distill`.
    pub distill: String,
    /// Description handed to `gen-occupancy`.
    pub query: String,
    pub mutation_rate: f64,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            demo: TeacherMode::RuleBased.name().into(),
            distill: TeacherMode::ScriptedExpert.name().into(),
            query: "pagoda".into(),
            mutation_rate: voxhive::expert::DEFAULT_MUTATION_RATE,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksSection {
    /// Task names; `corridor` is the held-out navigation suite.
    pub names: Vec<String>,
    /// Method tags evaluated by `eval`.
    pub methods: Vec<String>,
    /// Iteration cap; each task's maximum when unset.
    pub cap: Option<usize>,
}

impl Default for TasksSection {
    fn default() -> Self {
        TasksSection {
            names: ["corridor", "goal-search", "block-search", "map-explore", "material-collect", "building-create"]
                .map(String::from)
                .to_vec(),
            methods: ["teacher", "reference", "distilled", "wo-ee"].map(String::from).to_vec(),
            cap: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub master: u64,
    /// Evaluation seeds per (method, task) row group: `0..eval`.
    pub eval: u64,
    /// Rule-based demonstration episodes for the reference.
    pub demo_episodes: usize,
    /// Held-out corridors scored after distillation.
    pub held_out_episodes: usize,
    pub train_base: u64,
    pub held_out_base: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection {
            master: 0,
            eval: 3,
            demo_episodes: 40,
            held_out_episodes: 20,
            train_base: TRAIN_SEED_BASE,
            held_out_base: HELD_OUT_SEED_BASE,
        }
    }
}

fn teacher(name: &str, key: &str) -> Result<TeacherConfig, CliError> {
    let mode = TeacherMode::from_name(name)
        .ok_or_else(|| CliError::Config(format!("teacher.{key}: unknown teacher `{name}`")))?;
    Ok(TeacherConfig { mode, expert: mode == TeacherMode::ScriptedExpert })
}

/// 1-based line and column of byte offset `at`.
fn line_col(text: &str, at: usize) -> (usize, usize) {
    let before = &text[..at.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().replace('\n', " ");
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    CliError::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => CliError::Config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate().map_err(|e| CliError::Config(format!("world: {e}")))?;
        self.distill.validate().map_err(|e| CliError::Config(format!("distill: {e}")))?;
        self.demo_teacher()?;
        self.distill_teacher()?;
        if self.agents.counts.is_empty() {
            return Err(CliError::Config("agents.counts is empty".into()));
        }
        if let Some(&n) = self.agents.counts.iter().find(|n| !(1..=8).contains(*n)) {
            return Err(CliError::Config(format!("agents.counts: {n} is outside 1..=8")));
        }
        if !(0.0..=1.0).contains(&self.teacher.mutation_rate) {
            return Err(CliError::Config("teacher.mutation_rate must lie in [0, 1]".into()));
        }
        for name in &self.tasks.names {
            crate::TaskChoice::from_name(name)?;
        }
        for tag in &self.tasks.methods {
            crate::Method::from_tag(tag)?;
        }
        Ok(())
    }

    pub fn demo_teacher(&self) -> Result<TeacherConfig, CliError> {
        teacher(&self.teacher.demo, "demo")
    }

    pub fn distill_teacher(&self) -> Result<TeacherConfig, CliError> {
        teacher(&self.teacher.distill, "distill")
    }

    pub fn corridor(&self) -> Result<CorridorConfig, CliError> {
        Ok(CorridorConfig {
            demo_episodes: self.seeds.demo_episodes,
            eval_episodes: self.seeds.held_out_episodes,
            train_seed_base: self.seeds.train_base,
            held_out_seed_base: self.seeds.held_out_base,
            demo_teacher: self.demo_teacher()?,
            distill_teacher: self.distill_teacher()?,
        })
    }
}
