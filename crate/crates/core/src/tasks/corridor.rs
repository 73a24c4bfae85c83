//! L-shaped corridor navigation episodes used to train and compare students.

use rand::Rng;

use super::TaskError;
use crate::distill::{
    bc_fit, collect_demos, dagger_distill, evaluate, BcFit, DaggerOutcome, DistillConfig, DistillError, Episode,
    Performer,
};
use crate::hierarchy::SubGoal;
use crate::policy::{PolicyParams, SampleMode, TeacherConfig};
use crate::seed;
use crate::world::{Column, Dims, Dir, Pos, Role, WorldState, AIR, BEDROCK};

/// First seed of the training corridors.
pub const TRAIN_SEED_BASE: u64 = 10_000;
/// First seed of the held-out corridors. Training never reaches it.
pub const HELD_OUT_SEED_BASE: u64 = 900_000;

pub const CORRIDOR_SIDE: i32 = 16;
pub const CORRIDOR_HEIGHT: i32 = 4;
/// Walkable layer of a corridor world.
pub const CORRIDOR_LAYER: i32 = 1;

/// Start, corner and goal of a generated corridor plus every open column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorridorLayout {
    pub start: Column,
    pub corner: Column,
    pub goal: Column,
    pub open: Vec<Column>,
}

fn perpendicular(d: Dir, right: bool) -> Dir {
    let i = Dir::HORIZONTAL.iter().position(|h| *h == d).expect("horizontal direction");
    Dir::HORIZONTAL[(i + if right { 1 } else { 3 }) % 4]
}

/// Lay out an L: a first leg along one axis, a corner, a second leg along the
/// other. Dead-end stubs branch off pointing away from the goal.
pub fn corridor_layout(seed_value: u64) -> CorridorLayout {
    let mut rng = seed::rng_for(seed_value, "corridor");
    let first = Dir::HORIZONTAL[rng.gen_range(0..4)];
    let second = perpendicular(first, rng.gen_bool(0.5));
    let leg1 = rng.gen_range(3..=6);
    let leg2 = rng.gen_range(3..=6);
    let at = |c: Column, d: Dir, k: i32| {
        let (dx, _, dz) = d.offset();
        Column::new(c.x + dx * k, c.z + dz * k)
    };
    let start = Column::new(0, 0);
    let corner = at(start, first, leg1);
    let goal = at(corner, second, leg2);
    let mut open: Vec<Column> = (0..=leg1).map(|k| at(start, first, k)).collect();
    open.extend((1..=leg2).map(|k| at(corner, second, k)));
    let stub = |open: &mut Vec<Column>, from: Column, d: Dir, rng: &mut crate::seed::SimRng| {
        let len = rng.gen_range(1..=2);
        open.extend((1..=len).map(|k| at(from, d, k)));
    };
    for k in 1..leg1 {
        if rng.gen_bool(0.4) {
            stub(&mut open, at(start, first, k), second.opposite(), &mut rng);
        }
    }
    for k in 2..leg2 {
        if rng.gen_bool(0.4) {
            stub(&mut open, at(corner, second, k), first.opposite(), &mut rng);
        }
    }
    if rng.gen_bool(0.5) {
        stub(&mut open, start, first.opposite(), &mut rng);
    }
    if rng.gen_bool(0.5) {
        stub(&mut open, corner, first, &mut rng);
    }
    // Shift into the grid with a random margin.
    let (min_x, max_x) = (open.iter().map(|c| c.x).min().unwrap(), open.iter().map(|c| c.x).max().unwrap());
    let (min_z, max_z) = (open.iter().map(|c| c.z).min().unwrap(), open.iter().map(|c| c.z).max().unwrap());
    let sx = rng.gen_range(1..=(CORRIDOR_SIDE - 2 - (max_x - min_x)).max(1)) - min_x;
    let sz = rng.gen_range(1..=(CORRIDOR_SIDE - 2 - (max_z - min_z)).max(1)) - min_z;
    let shift = |c: Column| Column::new(c.x + sx, c.z + sz);
    open.sort();
    open.dedup();
    CorridorLayout {
        start: shift(start),
        corner: shift(corner),
        goal: shift(goal),
        open: open.into_iter().map(shift).collect(),
    }
}

/// Solid bedrock world with the layout carved out of the walk layer.
pub fn corridor_world(layout: &CorridorLayout, seed_value: u64) -> Result<WorldState, TaskError> {
    let dims = Dims::new(CORRIDOR_SIDE, CORRIDOR_SIDE, CORRIDOR_HEIGHT);
    let mut w = WorldState::empty(dims, seed_value);
    for y in 0..dims.h {
        for z in 0..dims.l {
            for x in 0..dims.w {
                w.set(Pos::new(x, y, z), BEDROCK);
            }
        }
    }
    for c in &layout.open {
        w.set(c.at(CORRIDOR_LAYER), AIR);
    }
    w.add_agent(0, layout.start.at(CORRIDOR_LAYER), Role::Conductor)?;
    Ok(w)
}

/// Step budget of a corridor episode.
pub fn corridor_budget(layout: &CorridorLayout) -> usize {
    3 * (layout.start.manhattan(layout.goal) as usize) + 6
}

/// Navigate-to-goal episode on the corridor generated from `seed_value`.
pub fn corridor_episode(seed_value: u64) -> Result<Episode, TaskError> {
    let layout = corridor_layout(seed_value);
    let world = corridor_world(&layout, seed_value)?;
    Ok(Episode::new(world, 0, SubGoal::navigate(0, layout.goal), corridor_budget(&layout)))
}

fn factory(base: u64) -> impl FnMut(usize) -> Result<Episode, DistillError> {
    move |i| corridor_episode(base + i as u64).map_err(|e| DistillError::InvalidConfig(e.to_string()))
}

/// Settings of the corridor training pipeline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CorridorConfig {
    /// Rule-based demonstration episodes for the reference.
    pub demo_episodes: usize,
    /// Held-out evaluation episodes.
    pub eval_episodes: usize,
    pub train_seed_base: u64,
    pub held_out_seed_base: u64,
    /// Teacher whose demonstrations the reference clones.
    pub demo_teacher: TeacherConfig,
    /// Teacher queried during distillation.
    pub distill_teacher: TeacherConfig,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        CorridorConfig {
            demo_episodes: 40,
            eval_episodes: 20,
            train_seed_base: TRAIN_SEED_BASE,
            held_out_seed_base: HELD_OUT_SEED_BASE,
            demo_teacher: TeacherConfig::rule_based(),
            distill_teacher: TeacherConfig::scripted_expert(),
        }
    }
}

/// Behavior-clone the demonstration teacher on the training corridors.
pub fn train_reference(cfg: &CorridorConfig, distill: &DistillConfig) -> Result<BcFit, TaskError> {
    let demos = collect_demos(factory(cfg.train_seed_base), cfg.demo_episodes, cfg.demo_teacher)?;
    Ok(bc_fit(&demos, distill.bc_l2_lambda, distill.bc_epochs, distill.bc_learning_rate)?)
}

/// DAgger with the preference objective against the distillation teacher. Round
/// `r` draws its rollouts from training seeds past the demonstration range.
pub fn distill_student(
    cfg: &CorridorConfig,
    reference: &PolicyParams,
    distill: &DistillConfig,
    seed_value: u64,
) -> Result<DaggerOutcome, TaskError> {
    let base = cfg.train_seed_base + cfg.demo_episodes as u64;
    let per_round = distill.rollouts_per_round as u64;
    let out = dagger_distill(
        |round, e| {
            corridor_episode(base + round as u64 * per_round + e as u64)
                .map_err(|err| DistillError::InvalidConfig(err.to_string()))
        },
        cfg.distill_teacher,
        reference,
        distill,
        &mut seed::rng_for(seed_value, "dagger"),
    )?;
    Ok(out)
}

/// Greedy success rate of `params` on the held-out corridors.
pub fn held_out_success(cfg: &CorridorConfig, params: &PolicyParams) -> Result<f64, TaskError> {
    Ok(evaluate(
        factory(cfg.held_out_seed_base),
        cfg.eval_episodes,
        Performer::Student(params, SampleMode::Greedy),
        cfg.held_out_seed_base,
    )?)
}
