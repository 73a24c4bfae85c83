use serde::{Deserialize, Serialize};

use super::features::goal_offset;
use super::{status_text, PolicyError, StatusToken};
use crate::expert::{DynamicMap, Occupancy};
use crate::hierarchy::{SubGoal, SubGoalKind, Target};
use crate::world::path::{voxel_distance, voxel_index, voxel_next_step};
use crate::world::{block, is_solid, name, BlockId, Column, Dir, Observation, Pos, WorldState, AIR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeacherMode {
    /// Scripted teacher fed by the extra expert (map and generated blueprint).
    ScriptedExpert,
    /// Scripted teacher without the expert: no map, fallback blueprint.
    Scripted,
    /// Local heuristic over the observation only.
    RuleBased,
}

impl TeacherMode {
    pub fn name(self) -> &'static str {
        match self {
            TeacherMode::ScriptedExpert => "scripted_expert",
            TeacherMode::Scripted => "scripted",
            TeacherMode::RuleBased => "rule_based",
        }
    }

    pub fn from_name(s: &str) -> Option<TeacherMode> {
        match s {
            "scripted_expert" => Some(TeacherMode::ScriptedExpert),
            "scripted" => Some(TeacherMode::Scripted),
            "rule_based" => Some(TeacherMode::RuleBased),
            _ => None,
        }
    }
}

/// Expert knowledge visible to the scripted teacher.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertView<'a> {
    pub map: Option<&'a DynamicMap>,
    pub blueprint: Option<&'a Occupancy>,
}

fn move_token(d: Dir) -> String {
    format!("move_{}", d.name())
}

fn status(s: StatusToken) -> String {
    status_text(&s)
}

/// Step toward the nearest of `goals` along a shortest 6-connected path.
/// `Ok(None)` means the agent already stands on a goal.
fn route(world: &WorldState, from: Pos, goals: &[Pos]) -> Result<Option<Dir>, ()> {
    let dist = voxel_distance(world, goals);
    match dist[voxel_index(world.dims, from)] {
        d if d < 0 => Err(()),
        0 => Ok(None),
        _ => Ok(voxel_next_step(world, from, &dist)),
    }
}

fn open_cells(world: &WorldState, c: Column) -> impl Iterator<Item = Pos> + '_ {
    (0..world.dims.h).map(move |y| c.at(y)).filter(|p| world.is_open(*p))
}

/// Blueprint voxels in placement order: bottom layer first, inner cells
/// before outer ones, then by z and x.
pub fn build_order(occ: &Occupancy) -> Vec<(Pos, BlockId)> {
    let d = occ.dims;
    let depth = |p: Pos| p.x.min(d.w - 1 - p.x).min(p.z).min(d.l - 1 - p.z);
    let mut cells: Vec<(Pos, BlockId)> = occ.blocks().collect();
    cells.sort_by_key(|(p, _)| (p.y, -depth(*p), p.z, p.x));
    cells
}

/// The scripted teacher's action token for `agent_id` on `subgoal`, with full
/// world access plus whatever expert knowledge `view` carries.
pub fn scripted_teacher_act(
    world: &WorldState,
    agent_id: u32,
    subgoal: &SubGoal,
    view: &ExpertView,
) -> Result<String, PolicyError> {
    let agent = world.agent(agent_id)?;
    let here = agent.position;
    match (&subgoal.kind, &subgoal.target) {
        (SubGoalKind::Navigate, Target::Column(c)) => {
            if here.column() == *c {
                return Ok(status(StatusToken::Done));
            }
            let mut goals: Vec<Pos> = open_cells(world, *c).collect();
            if goals.is_empty() {
                goals = Dir::HORIZONTAL.iter().flat_map(|d| open_cells(world, c.step(*d))).collect();
            }
            Ok(match route(world, here, &goals) {
                Ok(Some(d)) => move_token(d),
                Ok(None) => status(StatusToken::Done),
                Err(()) => status(StatusToken::Unreachable),
            })
        }
        (SubGoalKind::Explore, _) => {
            let map = view.map.ok_or_else(|| PolicyError::MissingExpert("explore".into()))?;
            let unexplored: Vec<Column> =
                subgoal.region.columns().filter(|c| map.contains(*c) && !map.is_explored(*c)).collect();
            if unexplored.is_empty() {
                return Ok(status(StatusToken::Done));
            }
            // Any spot that sees an unexplored column is a goal.
            let d = world.dims;
            let mut sees = vec![false; d.columns()];
            for u in &unexplored {
                for dz in -2..=2 {
                    for dx in -2..=2 {
                        let c = Column::new(u.x + dx, u.z + dz);
                        if d.contains_column(c) {
                            sees[d.column_index(c)] = true;
                        }
                    }
                }
            }
            let goals: Vec<Pos> = (0..d.columns())
                .filter(|&i| sees[i])
                .flat_map(|i| open_cells(world, d.column_at(i)).filter(|p| p.y == here.y))
                .collect();
            Ok(match route(world, here, &goals) {
                Ok(Some(dir)) => move_token(dir),
                // Standing where unexplored cells are visible: the map update
                // after this step marks them; drift toward the nearest one.
                Ok(None) => {
                    let near = unexplored.iter().min_by_key(|u| u.manhattan(here.column())).copied();
                    near.and_then(|u| {
                        let (dx, dz) = (u.x - here.x, u.z - here.z);
                        let dir = Dir::bucket(dx, 0, dz);
                        ((dx, dz) != (0, 0) && world.is_open(here.step(dir))).then(|| move_token(dir))
                    })
                    .unwrap_or_else(|| "noop".into())
                }
                Err(()) => status(StatusToken::Unreachable),
            })
        }
        (SubGoalKind::Collect, Target::Material { block: b, qty }) => {
            let have = agent.count(*b);
            if have >= *qty {
                return Ok(status(StatusToken::Done));
            }
            for d in Dir::HORIZONTAL {
                let p = here.step(d);
                if world.get(p) == *b && subgoal.region.contains(p.column()) && world.dims.contains(p) {
                    return Ok(format!("mine_{}", d.name()));
                }
            }
            let stands: Vec<Pos> = world
                .voxels()
                .filter(|&(p, v)| v == *b && block(v).mineable && subgoal.region.contains(p.column()))
                .flat_map(|(p, _)| Dir::HORIZONTAL.map(|d| p.step(d)))
                .filter(|s| world.is_open(*s))
                .collect();
            Ok(match route(world, here, &stands) {
                Ok(Some(d)) => move_token(d),
                _ => status(StatusToken::Missing { block: *b, qty: qty - have }),
            })
        }
        (SubGoalKind::Build, Target::Blueprint { origin, part, parts, .. }) => {
            let occ = view.blueprint.ok_or_else(|| PolicyError::MissingExpert("build".into()))?;
            build_act(world, agent_id, here, occ, *origin, *part, *parts)
        }
        (kind, target) => Err(PolicyError::Schema(format!("{} sub-goal with target {target:?}", kind.name()))),
    }
}

fn build_act(
    world: &WorldState,
    agent_id: u32,
    here: Pos,
    occ: &Occupancy,
    origin: Pos,
    part: u32,
    parts: u32,
) -> Result<String, PolicyError> {
    let agent = world.agent(agent_id)?;
    let parts = parts.max(1) as usize;
    let occupied = |p: Pos| world.agents.iter().any(|a| a.position == p && a.agent_id != agent_id);
    let missing: Vec<(Pos, BlockId)> = build_order(occ)
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i % parts == part as usize % parts)
        .map(|(_, (p, b))| (origin.offset(p.x, p.y, p.z), b))
        .filter(|(p, _)| world.dims.contains(*p) && world.get(*p) == AIR)
        .collect();
    if missing.is_empty() {
        return Ok(status(StatusToken::Done));
    }
    let in_blueprint = |p: Pos| {
        let l = Pos::new(p.x - origin.x, p.y - origin.y, p.z - origin.z);
        occ.dims.contains(l) && occ.get(l.x, l.y, l.z) != AIR
    };
    for (target, b) in &missing {
        if occupied(*target) {
            continue;
        }
        let open_stands: Vec<Pos> = Dir::HORIZONTAL
            .iter()
            .map(|d| target.step(*d))
            .filter(|s| world.is_open(*s))
            .collect();
        let mut stands: Vec<Pos> = open_stands.iter().copied().filter(|s| !in_blueprint(*s)).collect();
        if stands.is_empty() {
            stands = open_stands;
        }
        if stands.is_empty() {
            continue;
        }
        let have = agent.count(*b);
        if have == 0 {
            let need = missing.iter().filter(|(_, m)| m == b).count() as u32;
            return Ok(status(StatusToken::Missing { block: *b, qty: need }));
        }
        if let Some(d) = here.dir_to(*target).filter(|d| Dir::HORIZONTAL.contains(d)) {
            return Ok(format!("place_{}:{}", d.name(), name(*b)));
        }
        match route(world, here, &stands) {
            Ok(Some(d)) => return Ok(move_token(d)),
            Ok(None) => unreachable!("stand is adjacent to the target"),
            Err(()) => continue,
        }
    }
    Ok(status(StatusToken::Unreachable))
}

fn legal_move(obs: &Observation, d: Dir) -> bool {
    let (dx, dy, dz) = d.offset();
    obs.at(dx, dy, dz).is_some_and(|b| !is_solid(b))
}

/// First legal horizontal move in N, E, S, W order.
fn fallback_move(obs: &Observation) -> String {
    Dir::HORIZONTAL
        .into_iter()
        .find(|d| legal_move(obs, *d))
        .map(move_token)
        .unwrap_or_else(|| "noop".into())
}

/// Legal move that strictly reduces the in-patch Manhattan distance to
/// `(dx, dy, dz)`, first in `Dir::ALL` order.
fn approach(obs: &Observation, dx: i32, dy: i32, dz: i32) -> Option<String> {
    let dist = |x: i32, y: i32, z: i32| (dx - x).abs() + (dy - y).abs() + (dz - z).abs();
    let now = dist(0, 0, 0);
    Dir::ALL
        .into_iter()
        .find(|d| {
            let (x, y, z) = d.offset();
            legal_move(obs, *d) && dist(x, y, z) < now
        })
        .map(move_token)
}

/// Greedy local heuristic that reads only the observation.
pub fn rule_based_teacher_act(obs: &Observation, subgoal: &SubGoal) -> String {
    let here = obs.position.column();
    match (&subgoal.kind, &subgoal.target) {
        (SubGoalKind::Navigate, Target::Column(c)) => {
            let (dx, dz) = (c.x - here.x, c.z - here.z);
            if (dx, dz) == (0, 0) {
                return status(StatusToken::Done);
            }
            if dx.abs() <= 2 && dz.abs() <= 2 {
                if let Some(t) = approach(obs, dx, 0, dz) {
                    return t;
                }
            }
            fallback_move(obs)
        }
        (SubGoalKind::Collect, Target::Material { block: b, qty }) => {
            if obs.inventory.get(b).copied().unwrap_or(0) >= *qty {
                return status(StatusToken::Done);
            }
            for d in Dir::HORIZONTAL {
                let (dx, _, dz) = d.offset();
                if obs.at(dx, 0, dz) == Some(*b) {
                    return format!("mine_{}", d.name());
                }
            }
            let nearest = Observation::offsets()
                .filter(|&(dx, dy, dz)| obs.at(dx, dy, dz) == Some(*b))
                .min_by_key(|&(dx, dy, dz)| dx.abs() + dy.abs() + dz.abs());
            if let Some((dx, dy, dz)) = nearest {
                // Aim for the cell beside the block at its level.
                let side = if dx != 0 { dx - dx.signum() } else { dx };
                let dz2 = if dx != 0 { dz } else { dz - dz.signum() };
                if let Some(t) = approach(obs, side, dy, dz2) {
                    return t;
                }
            }
            fallback_move(obs)
        }
        (SubGoalKind::Build, Target::Blueprint { bill, .. }) => {
            let material = bill.keys().find(|b| obs.inventory.get(b).copied().unwrap_or(0) > 0);
            let Some(&b) = material else {
                let (&b, &n) = bill.iter().next().expect("blueprint bill is non-empty");
                return status(StatusToken::Missing { block: b, qty: n });
            };
            for d in Dir::HORIZONTAL {
                let (dx, _, dz) = d.offset();
                if obs.at(dx, 0, dz) == Some(AIR) && subgoal.region.contains(here.step(d)) {
                    return format!("place_{}:{}", d.name(), name(b));
                }
            }
            fallback_move(obs)
        }
        (SubGoalKind::Explore, _) => match goal_offset(obs, subgoal, None) {
            Some((dx, dz)) if dx.abs() <= 2 && dz.abs() <= 2 => approach(obs, dx, 0, dz).unwrap_or_else(|| fallback_move(obs)),
            _ => fallback_move(obs),
        },
        _ => "noop".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::skill_lookup;
    use crate::world::path::layer_distance;
    use crate::world::{Dims, Rect, Role, PLANKS, STONE};
    use std::collections::BTreeMap;

    fn floor(w: i32, l: i32, h: i32) -> WorldState {
        let mut world = WorldState::empty(Dims::new(w, l, h), 0);
        for z in 0..l {
            for x in 0..w {
                world.set(Pos::new(x, 0, z), STONE);
            }
        }
        world
    }

    fn run_scripted(world: &mut WorldState, sg: &SubGoal, view: &ExpertView, cap: usize) -> (usize, String) {
        for step in 0..cap {
            let tok = scripted_teacher_act(world, 0, sg, view).unwrap();
            let skill = skill_lookup(&tok).unwrap();
            if skill.action_index().is_none() {
                return (step, tok);
            }
            world.step(0, &skill.to_action(None, &[])).unwrap();
        }
        (cap, String::new())
    }

    #[test]
    fn straight_corridor_takes_exactly_k_steps() {
        let mut w = WorldState::empty(Dims::new(9, 3, 3), 0);
        for (p, _) in w.clone().voxels() {
            if !(p.y == 1 && p.z == 1) {
                w.set(p, STONE);
            }
        }
        w.add_agent(0, Pos::new(0, 1, 1), Role::Conductor).unwrap();
        let sg = SubGoal::navigate(0, Column::new(7, 1));
        let (steps, tok) = run_scripted(&mut w, &sg, &ExpertView::default(), 50);
        assert_eq!((steps, tok.as_str()), (7, "done"));
    }

    #[test]
    fn navigate_step_decreases_bfs_distance() {
        let mut w = floor(8, 8, 2);
        w.set(Pos::new(3, 1, 3), STONE);
        w.set(Pos::new(3, 1, 4), STONE);
        w.add_agent(0, Pos::new(1, 1, 4), Role::Conductor).unwrap();
        let goal = Column::new(6, 4);
        let sg = SubGoal::navigate(0, goal);
        let dist = layer_distance(&w, 1, &[goal]);
        let tok = scripted_teacher_act(&w, 0, &sg, &ExpertView::default()).unwrap();
        let Skill::Move(d) = skill_lookup(&tok).unwrap() else { panic!("{tok}") };
        let next = Pos::new(1, 1, 4).step(d).column();
        assert!(dist[w.dims.column_index(next)] < dist[w.dims.column_index(Column::new(1, 4))]);
    }

    use crate::policy::Skill;

    #[test]
    fn enclosed_target_is_unreachable() {
        let mut w = floor(7, 7, 2);
        for c in [(3, 2), (2, 3), (4, 3), (3, 4)] {
            w.set(Pos::new(c.0, 1, c.1), STONE);
        }
        w.add_agent(0, Pos::new(0, 1, 0), Role::Conductor).unwrap();
        let sg = SubGoal::navigate(0, Column::new(3, 3));
        assert_eq!(scripted_teacher_act(&w, 0, &sg, &ExpertView::default()).unwrap(), "unreachable");
    }

    fn build_goal(occ: &Occupancy, origin: Pos) -> SubGoal {
        SubGoal::new(
            0,
            SubGoalKind::Build,
            Target::Blueprint {
                structure: "t".into(),
                origin,
                dims: occ.dims,
                bill: occ.material_bill(),
                part: 0,
                parts: 1,
            },
            Rect::new(origin.x, origin.z, origin.x + occ.dims.w, origin.z + occ.dims.l),
        )
    }

    #[test]
    fn build_places_everything_then_done() {
        let mut occ = Occupancy::empty(Dims::new(3, 3, 2));
        for (x, y, z) in [(0, 0, 0), (1, 0, 1), (2, 0, 2), (1, 1, 1), (0, 1, 2)] {
            occ.set(x, y, z, PLANKS);
        }
        let mut w = floor(10, 10, 5);
        w.add_agent(0, Pos::new(0, 1, 0), Role::Conductor).unwrap();
        w.give(0, PLANKS, 5).unwrap();
        let origin = Pos::new(4, 1, 4);
        let sg = build_goal(&occ, origin);
        let view = ExpertView { map: None, blueprint: Some(&occ) };
        let (_, tok) = run_scripted(&mut w, &sg, &view, 200);
        assert_eq!(tok, "done");
        for (p, b) in occ.blocks() {
            assert_eq!(w.get(origin.offset(p.x, p.y, p.z)), b);
        }
        assert_eq!(scripted_teacher_act(&w, 0, &sg, &ExpertView::default()).unwrap_err().kind(), "MissingExpert");
    }

    #[test]
    fn build_without_material_reports_missing() {
        let mut occ = Occupancy::empty(Dims::new(2, 2, 1));
        occ.set(0, 0, 0, PLANKS);
        occ.set(1, 0, 1, PLANKS);
        let mut w = floor(6, 6, 3);
        w.add_agent(0, Pos::new(0, 1, 0), Role::Conductor).unwrap();
        let sg = build_goal(&occ, Pos::new(2, 1, 2));
        let view = ExpertView { map: None, blueprint: Some(&occ) };
        assert_eq!(scripted_teacher_act(&w, 0, &sg, &view).unwrap(), "missing:planks:2");
    }

    #[test]
    fn collect_mines_to_quota() {
        let mut w = floor(8, 8, 3);
        for x in 4..8 {
            w.set(Pos::new(x, 1, 6), STONE);
        }
        w.add_agent(0, Pos::new(0, 1, 0), Role::Conductor).unwrap();
        let sg = SubGoal::collect(0, STONE, 3, Rect::full(w.dims));
        let (_, tok) = run_scripted(&mut w, &sg, &ExpertView::default(), 100);
        assert_eq!(tok, "done");
        assert_eq!(w.agent(0).unwrap().count(STONE), 3);
        let sg = SubGoal::collect(0, crate::world::DIAMOND, 1, Rect::full(w.dims));
        assert_eq!(scripted_teacher_act(&w, 0, &sg, &ExpertView::default()).unwrap(), "missing:diamond:1");
    }

    #[test]
    fn explore_needs_map_and_finishes() {
        let mut w = floor(12, 12, 3);
        w.add_agent(0, Pos::new(0, 1, 0), Role::Conductor).unwrap();
        let sg = SubGoal::explore(0, Rect::new(0, 0, 12, 12));
        assert_eq!(scripted_teacher_act(&w, 0, &sg, &ExpertView::default()).unwrap_err().kind(), "MissingExpert");
        let mut map = DynamicMap::new(w.dims);
        for _ in 0..200 {
            let obs = w.observe(0).unwrap();
            let reports: Vec<_> = obs.visible_columns(w.dims).into_iter().map(|c| (c, Default::default())).collect();
            map.update(&reports).unwrap();
            let tok = scripted_teacher_act(&w, 0, &sg, &ExpertView { map: Some(&map), blueprint: None }).unwrap();
            if tok == "done" {
                break;
            }
            w.step(0, &skill_lookup(&tok).unwrap().to_action(None, &[])).unwrap();
        }
        assert!(map.is_complete());
    }

    #[test]
    fn rule_based_examples() {
        let mut w = floor(9, 9, 3);
        w.add_agent(0, Pos::new(4, 1, 4), Role::Conductor).unwrap();
        let obs = w.observe(0).unwrap();
        let far = SubGoal::navigate(0, Column::new(8, 8));
        assert_eq!(rule_based_teacher_act(&obs, &far), "move_north");
        let near = SubGoal::navigate(0, Column::new(4, 6));
        assert_eq!(rule_based_teacher_act(&obs, &near), "move_south");
        w.set(Pos::new(4, 1, 3), STONE);
        let obs = w.observe(0).unwrap();
        assert_eq!(rule_based_teacher_act(&obs, &far), "move_east");
        let collect = SubGoal::collect(0, STONE, 1, Rect::full(w.dims));
        assert_eq!(rule_based_teacher_act(&obs, &collect), "mine_north");
        let mut inv = BTreeMap::new();
        inv.insert(STONE, 1);
        let obs = Observation { inventory: inv, ..obs };
        assert_eq!(rule_based_teacher_act(&obs, &collect), "done");
    }
}
