use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::expert::DynamicMap;
use crate::hierarchy::{SubGoal, SubGoalKind, Target};
use crate::world::{is_solid, Column, Dir, Observation, AIR, BLOCKS};

pub const SCHEMA_ID: &str = "features-v1";

/// Sparse binary vector: the sorted indices of its active entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dim: usize,
    pub active: Vec<usize>,
}

impl FeatureVector {
    pub fn new(dim: usize, mut active: Vec<usize>) -> Self {
        active.sort_unstable();
        active.dedup();
        assert!(active.last().map_or(true, |&i| i < dim), "feature index out of range");
        FeatureVector { dim, active }
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.active {
            v[i] = 1.0;
        }
        v
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active.binary_search(&i).is_ok()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.active.iter().map(|&i| feature_names()[i].as_str()).collect()
    }
}

const H: [&str; 4] = ["north", "east", "south", "west"];

/// Feature names in index order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        let mut n: Vec<String> = Vec::new();
        for k in SubGoalKind::ALL {
            n.push(format!("kind:{}", k.name()));
        }
        for d in H {
            n.push(format!("goal:{d}"));
        }
        for d in H {
            n.push(format!("goal_main:{d}"));
        }
        n.push("goal:here".into());
        n.push("goal:visible".into());
        for d in H {
            n.push(format!("near_goal:{d}"));
        }
        for b in &BLOCKS[1..] {
            n.push(format!("adjacent:{}", b.name));
        }
        for d in Dir::ALL {
            n.push(format!("blocked:{}", d.name()));
        }
        for d in H {
            n.push(format!("frontier:{d}"));
        }
        n.push("frontier:none".into());
        for f in ["inv:any", "inv:ge4", "inv:ge16", "inv:goal_met"] {
            n.push(f.into());
        }
        for d in Dir::ALL {
            n.push(format!("audio:{}", d.name()));
        }
        n.push("region:inside".into());
        n.push("bias".into());
        n
    })
}

fn index(name: &str) -> usize {
    feature_names().iter().position(|n| n == name).expect("feature name in schema")
}

fn horizontal_dir(dx: i32, dz: i32) -> Option<Dir> {
    (dx != 0 || dz != 0).then(|| Dir::bucket(dx, 0, dz))
}

/// Offset the sub-goal points at, as seen from the observation alone (plus
/// the shared map for exploration).
pub(super) fn goal_offset(obs: &Observation, subgoal: &SubGoal, map: Option<&DynamicMap>) -> Option<(i32, i32)> {
    let here = obs.position.column();
    let toward = |c: Column| (c.x - here.x, c.z - here.z);
    match (&subgoal.kind, &subgoal.target) {
        (SubGoalKind::Navigate, Target::Column(c)) => Some(toward(*c)),
        (SubGoalKind::Explore, _) => match map {
            Some(m) => m.frontier_where(here, |c| subgoal.region.contains(c)).map(toward),
            None => (!subgoal.region.contains(here)).then(|| toward(subgoal.region.center())),
        },
        (SubGoalKind::Collect, Target::Material { block, .. }) => Observation::offsets()
            .filter(|&(dx, dy, dz)| obs.at(dx, dy, dz) == Some(*block))
            .min_by_key(|&(dx, dy, dz)| dx.abs() + dy.abs() + dz.abs())
            .map(|(dx, _, dz)| (dx, dz)),
        (SubGoalKind::Build, _) => (!subgoal.region.contains(here)).then(|| toward(subgoal.region.center())),
        _ => None,
    }
}

fn check_schema(subgoal: &SubGoal) -> Result<(), PolicyError> {
    let ok = matches!(
        (&subgoal.kind, &subgoal.target),
        (SubGoalKind::Navigate, Target::Column(_))
            | (SubGoalKind::Explore, _)
            | (SubGoalKind::Collect, Target::Material { .. })
            | (SubGoalKind::Build, Target::Blueprint { .. })
    );
    if ok {
        Ok(())
    } else {
        Err(PolicyError::Schema(format!("{} sub-goal with target {:?}", subgoal.kind.name(), subgoal.target)))
    }
}

/// Binary features of the student. Reads the observation, the sub-goal and
/// optionally the shared dynamic map; never any other expert knowledge.
pub fn featurize(obs: &Observation, subgoal: &SubGoal, map: Option<&DynamicMap>) -> Result<FeatureVector, PolicyError> {
    check_schema(subgoal)?;
    let mut on: Vec<usize> = Vec::with_capacity(24);
    let mut set = |name: String| on.push(index(&name));
    set(format!("kind:{}", subgoal.kind.name()));
    let here = obs.position.column();

    let offset = goal_offset(obs, subgoal, map);
    if let Some((dx, dz)) = offset {
        if dz < 0 {
            set("goal:north".into());
        }
        if dx > 0 {
            set("goal:east".into());
        }
        if dz > 0 {
            set("goal:south".into());
        }
        if dx < 0 {
            set("goal:west".into());
        }
        match horizontal_dir(dx, dz) {
            Some(d) => set(format!("goal_main:{}", d.name())),
            None => set("goal:here".into()),
        }
    }
    let visible = match (&subgoal.kind, &subgoal.target) {
        (SubGoalKind::Navigate, Target::Column(c)) => (c.x - here.x).abs() <= 2 && (c.z - here.z).abs() <= 2,
        (SubGoalKind::Collect, _) => offset.is_some(),
        _ => subgoal.region.contains(here),
    };
    if visible {
        set("goal:visible".into());
    }
    for d in Dir::HORIZONTAL {
        let (dx, _, dz) = d.offset();
        let near = match (&subgoal.kind, &subgoal.target) {
            (SubGoalKind::Navigate, Target::Column(c)) => here.step(d) == *c,
            (SubGoalKind::Collect, Target::Material { block, .. }) => obs.at(dx, 0, dz) == Some(*block),
            (SubGoalKind::Build, _) => obs.at(dx, 0, dz) == Some(AIR) && subgoal.region.contains(here.step(d)),
            (SubGoalKind::Explore, _) => map.is_some_and(|m| m.contains(here.step(d)) && !m.is_explored(here.step(d))),
            _ => false,
        };
        if near {
            set(format!("near_goal:{}", d.name()));
        }
    }
    let mut adjacent = [false; BLOCKS.len()];
    for d in Dir::ALL {
        let (dx, dy, dz) = d.offset();
        let b = obs.at(dx, dy, dz).unwrap_or(AIR);
        adjacent[b as usize] = true;
        if is_solid(b) {
            set(format!("blocked:{}", d.name()));
        }
    }
    for (i, b) in BLOCKS.iter().enumerate().skip(1) {
        if adjacent[i] {
            set(format!("adjacent:{}", b.name));
        }
    }
    match map.and_then(|m| m.frontier_query(here)).and_then(|c| horizontal_dir(c.x - here.x, c.z - here.z)) {
        Some(d) => set(format!("frontier:{}", d.name())),
        None => set("frontier:none".into()),
    }
    let total: u32 = obs.inventory.values().sum();
    if total > 0 {
        set("inv:any".into());
    }
    if total >= 4 {
        set("inv:ge4".into());
    }
    if total >= 16 {
        set("inv:ge16".into());
    }
    let met = match &subgoal.target {
        Target::Material { block, qty } => obs.inventory.get(block).copied().unwrap_or(0) >= *qty,
        Target::Blueprint { bill, .. } => bill.keys().any(|b| obs.inventory.contains_key(b)),
        _ => false,
    };
    if met {
        set("inv:goal_met".into());
    }
    let mut heard = [false; 6];
    for cue in &obs.s_a {
        heard[Dir::ALL.iter().position(|d| *d == cue.direction).expect("direction")] = true;
    }
    for (i, d) in Dir::ALL.iter().enumerate() {
        if heard[i] {
            set(format!("audio:{}", d.name()));
        }
    }
    if subgoal.region.contains(here) {
        set("region:inside".into());
    }
    set("bias".into());
    Ok(FeatureVector::new(feature_names().len(), on))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Dims, Pos, Rect, Role, WorldState, DIAMOND, STONE};

    fn world() -> WorldState {
        let mut w = WorldState::empty(Dims::new(9, 9, 5), 0);
        for z in 0..9 {
            for x in 0..9 {
                w.set(Pos::new(x, 0, z), STONE);
            }
        }
        w.add_agent(0, Pos::new(4, 1, 4), Role::Conductor).unwrap();
        w
    }

    #[test]
    fn adjacent_diamond_and_determinism() {
        let mut w = world();
        w.set(Pos::new(5, 1, 4), DIAMOND);
        let obs = w.observe(0).unwrap();
        let sg = SubGoal::navigate(0, Column::new(8, 4));
        let phi = featurize(&obs, &sg, None).unwrap();
        let names = phi.names();
        assert!(names.contains(&"adjacent:diamond"));
        assert!(names.contains(&"adjacent:stone"));
        assert!(names.contains(&"blocked:east"));
        assert!(names.contains(&"blocked:down"));
        assert!(names.contains(&"goal:east"));
        assert!(names.contains(&"goal_main:east"));
        assert!(names.contains(&"frontier:none"));
        assert!(!names.contains(&"goal:visible"));
        assert_eq!(phi, featurize(&obs, &sg, None).unwrap());
        assert_eq!(phi.dim, feature_names().len());
    }

    #[test]
    fn mismatched_target_is_schema_error() {
        let w = world();
        let obs = w.observe(0).unwrap();
        let mut sg = SubGoal::explore(0, Rect::new(0, 0, 9, 9));
        sg.kind = SubGoalKind::Collect;
        assert_eq!(featurize(&obs, &sg, None).unwrap_err().kind(), "SchemaError");
    }

    #[test]
    fn names_are_unique() {
        let names = feature_names();
        let set: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
    }
}
