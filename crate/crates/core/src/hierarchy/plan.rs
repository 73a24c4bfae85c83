use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::task::{GoalQuery, Intent, TaskSpec};
use super::PlanError;
use crate::expert::{DynamicMap, Occupancy};
use crate::memory::describe_observation;
use crate::world::{name, BlockId, Column, Dims, Observation, Pos, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubGoalKind {
    Navigate,
    Explore,
    Collect,
    Build,
}

impl SubGoalKind {
    pub const ALL: [SubGoalKind; 4] = [SubGoalKind::Navigate, SubGoalKind::Explore, SubGoalKind::Collect, SubGoalKind::Build];

    pub fn name(self) -> &'static str {
        match self {
            SubGoalKind::Navigate => "navigate",
            SubGoalKind::Explore => "explore",
            SubGoalKind::Collect => "collect",
            SubGoalKind::Build => "build",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Column(Column),
    /// The sub-goal's region itself.
    Area,
    Material { block: BlockId, qty: u32 },
    Blueprint {
        structure: String,
        /// World position of the blueprint's local origin.
        origin: Pos,
        dims: Dims,
        bill: BTreeMap<BlockId, u32>,
        /// This executor handles blueprint blocks whose build-order index is
        /// `part` modulo `parts`.
        part: u32,
        parts: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pending,
    Done,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoal {
    pub id: usize,
    pub kind: SubGoalKind,
    pub target: Target,
    pub region: Rect,
    pub depends_on: Vec<usize>,
    pub status: Status,
    /// Failures reported against this sub-goal so far.
    pub attempts: u32,
}

impl SubGoal {
    pub fn new(id: usize, kind: SubGoalKind, target: Target, region: Rect) -> Self {
        SubGoal { id, kind, target, region, depends_on: Vec::new(), status: Status::Pending, attempts: 0 }
    }

    pub fn navigate(id: usize, to: Column) -> Self {
        SubGoal::new(id, SubGoalKind::Navigate, Target::Column(to), Rect::new(to.x, to.z, to.x + 1, to.z + 1))
    }

    pub fn explore(id: usize, region: Rect) -> Self {
        SubGoal::new(id, SubGoalKind::Explore, Target::Area, region)
    }

    pub fn collect(id: usize, block: BlockId, qty: u32, region: Rect) -> Self {
        SubGoal::new(id, SubGoalKind::Collect, Target::Material { block, qty }, region)
    }

    /// Workload estimate: area for Explore, quantity for Collect, block count
    /// for Build, 1 for Navigate.
    pub fn workload(&self) -> u64 {
        match (&self.kind, &self.target) {
            (SubGoalKind::Explore, _) => self.region.area() as u64,
            (_, Target::Material { qty, .. }) => *qty as u64,
            (_, Target::Blueprint { bill, .. }) => bill.values().map(|&n| n as u64).sum(),
            _ => 1,
        }
    }

    pub fn is_open(&self) -> bool {
        self.status == Status::Pending
    }
}

/// Manager output: sub-goals in topological order plus group assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Plan {
    pub subgoals: Vec<SubGoal>,
    pub assignment: BTreeMap<usize, usize>,
    /// describe() tokens of the states the plan was made from.
    pub conditions: BTreeSet<String>,
    /// Regions found unreachable.
    pub excluded: Vec<Rect>,
    /// Sub-goals given up after exhausting their retry budget.
    pub unsolvable: Vec<usize>,
    /// World extent the plan covers.
    pub area: Rect,
}

/// Failures tolerated per sub-goal before it is dropped.
pub const RETRY_BUDGET: u32 = 3;

impl Plan {
    pub fn get(&self, id: usize) -> Option<&SubGoal> {
        self.subgoals.iter().find(|s| s.id == id)
    }

    pub fn get_mut(&mut self, id: usize) -> Option<&mut SubGoal> {
        self.subgoals.iter_mut().find(|s| s.id == id)
    }

    fn next_id(&self) -> usize {
        self.subgoals.iter().map(|s| s.id + 1).max().unwrap_or(0)
    }

    pub fn is_complete(&self) -> bool {
        self.subgoals.iter().all(|s| !s.is_open())
    }

    /// A pending sub-goal whose dependencies are all done or dropped.
    pub fn is_ready(&self, id: usize) -> bool {
        self.get(id).is_some_and(|s| {
            s.is_open() && s.depends_on.iter().all(|d| self.get(*d).map_or(true, |g| !g.is_open()))
        })
    }

    pub fn mark(&mut self, id: usize, status: Status) {
        if let Some(s) = self.get_mut(id) {
            s.status = status;
        }
    }

    /// Ids in an order respecting `depends_on`, or `Cycle` if none exists.
    pub fn topological_order(&self) -> Result<Vec<usize>, PlanError> {
        let mut done: BTreeSet<usize> = BTreeSet::new();
        let mut order = Vec::with_capacity(self.subgoals.len());
        while order.len() < self.subgoals.len() {
            let next = self.subgoals.iter().find(|s| {
                !done.contains(&s.id) && s.depends_on.iter().all(|d| done.contains(d) || self.get(*d).is_none())
            });
            match next {
                Some(s) => {
                    done.insert(s.id);
                    order.push(s.id);
                }
                None => return Err(PlanError::Cycle),
            }
        }
        Ok(order)
    }

    /// Weakly connected components of the dependency graph, each listed in
    /// plan order, components ordered by their first member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let ids: Vec<usize> = self.subgoals.iter().map(|s| s.id).collect();
        let mut parent: BTreeMap<usize, usize> = ids.iter().map(|&i| (i, i)).collect();
        fn find(p: &mut BTreeMap<usize, usize>, x: usize) -> usize {
            let mut r = x;
            while p[&r] != r {
                r = p[&r];
            }
            let mut c = x;
            while p[&c] != r {
                let n = p[&c];
                p.insert(c, r);
                c = n;
            }
            r
        }
        for s in &self.subgoals {
            for d in &s.depends_on {
                if parent.contains_key(d) {
                    let (a, b) = (find(&mut parent, s.id), find(&mut parent, *d));
                    if a != b {
                        parent.insert(a.max(b), a.min(b));
                    }
                }
            }
        }
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for &i in &ids {
            let root = find(&mut parent, i);
            match groups.iter_mut().find(|(r, _)| *r == root) {
                Some((_, members)) => members.push(i),
                None => groups.push((root, vec![i])),
            }
        }
        groups.into_iter().map(|(_, m)| m).collect()
    }
}

/// Split `rect` into at most `n` disjoint, non-empty rectangles covering it,
/// by recursive proportional cuts along the longer side.
pub fn partition(rect: Rect, n: usize) -> Vec<Rect> {
    if rect.is_empty() || n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![rect];
    }
    if rect.width() < rect.length() || rect.width() < 2 {
        return partition_along_z(rect, n);
    }
    let first = n / 2;
    let cut = rect.x0 + ((rect.width() as usize * first) / n).max(1) as i32;
    let mut out = partition(Rect::new(rect.x0, rect.z0, cut, rect.z1), first);
    out.extend(partition(Rect::new(cut, rect.z0, rect.x1, rect.z1), n - first));
    out
}

fn partition_along_z(rect: Rect, n: usize) -> Vec<Rect> {
    if rect.length() < 2 {
        return vec![rect];
    }
    let first = n / 2;
    let cut = rect.z0 + ((rect.length() as usize * first) / n).max(1) as i32;
    let mut out = partition(Rect::new(rect.x0, rect.z0, rect.x1, cut), first);
    out.extend(partition(Rect::new(rect.x0, cut, rect.x1, rect.z1), n - first));
    out
}

/// Split `total` into `n` shares differing by at most one, larger shares first.
pub fn split_quantity(total: u32, n: usize) -> Vec<u32> {
    let n = n.max(1) as u32;
    (0..n).map(|i| total / n + u32::from(i < total % n)).collect()
}

/// Inputs to the manager besides the agents' observations.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub dims: Dims,
    pub conductors: usize,
    pub map: Option<&'a DynamicMap>,
    /// Construction target and its world origin, for Build tasks.
    pub blueprint: Option<(&'a Occupancy, Pos)>,
    /// Regions to leave out of exploration.
    pub excluded: &'a [Rect],
}

impl<'a> PlanContext<'a> {
    pub fn new(dims: Dims, conductors: usize) -> Self {
        PlanContext { dims, conductors, map: None, blueprint: None, excluded: &[] }
    }
}

fn unexplored_bbox(ctx: &PlanContext) -> Option<Rect> {
    let full = Rect::full(ctx.dims);
    let Some(map) = ctx.map else { return Some(full) };
    let (mut x0, mut z0, mut x1, mut z1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
    for c in full.columns() {
        if map.is_explored(c) || ctx.excluded.iter().any(|r| r.contains(c)) {
            continue;
        }
        x0 = x0.min(c.x);
        z0 = z0.min(c.z);
        x1 = x1.max(c.x + 1);
        z1 = z1.max(c.z + 1);
    }
    (x0 <= x1 && x0 != i32::MAX).then(|| Rect::new(x0, z0, x1, z1))
}

fn goal_tag(q: &GoalQuery) -> Option<String> {
    match q {
        GoalQuery::Object(b) => Some(format!("block:{}", name(*b))),
        GoalQuery::Audio(e) => Some(format!("audio:{e}")),
        GoalQuery::Image(_) => None,
    }
}

/// Manager planning: decompose the task into sub-goals and assign
/// independent chains to conductor groups round-robin.
pub fn manager_plan(states: &[Observation], task: &TaskSpec, ctx: &PlanContext) -> Result<Plan, PlanError> {
    let intent = task.intent()?;
    if ctx.conductors == 0 {
        return Err(PlanError::NoAgents);
    }
    let mut plan = Plan { excluded: ctx.excluded.to_vec(), area: Rect::full(ctx.dims), ..Plan::default() };
    for obs in states {
        plan.conditions.extend(describe_observation(obs));
    }
    let full = Rect::full(ctx.dims);
    let explore_all = |plan: &mut Plan| {
        if let Some(area) = unexplored_bbox(ctx) {
            for (i, r) in partition(area, ctx.conductors).into_iter().enumerate() {
                plan.subgoals.push(SubGoal::explore(i, r));
            }
        }
    };
    match intent {
        Intent::Explore | Intent::Search(_) => explore_all(&mut plan),
        Intent::Find(q) => {
            let known = goal_tag(&q).and_then(|t| ctx.map.and_then(|m| m.columns_tagged(&t).first().copied()));
            match known {
                Some(c) => plan.subgoals.push(SubGoal::navigate(0, c)),
                None => explore_all(&mut plan),
            }
        }
        Intent::Collect(items) => {
            for (block, qty) in items {
                for share in split_quantity(qty, ctx.conductors) {
                    if share > 0 {
                        let id = plan.next_id();
                        plan.subgoals.push(SubGoal::collect(id, block, share, full));
                    }
                }
            }
        }
        Intent::Build { tokens, .. } => {
            let (occ, origin) = ctx.blueprint.ok_or(PlanError::MissingBlueprint)?;
            let bill = occ.material_bill();
            let mut deps = Vec::new();
            for (&block, &qty) in &bill {
                let id = plan.next_id();
                plan.subgoals.push(SubGoal::collect(id, block, qty, full));
                deps.push(id);
            }
            let d = occ.dims;
            let site = Rect::new(origin.x, origin.z, origin.x + d.w, origin.z + d.l);
            let id = plan.next_id();
            let structure = tokens.first().cloned().unwrap_or_default();
            let mut build = SubGoal::new(
                id,
                SubGoalKind::Build,
                Target::Blueprint { structure, origin, dims: d, bill, part: 0, parts: 1 },
                site,
            );
            build.depends_on = deps;
            plan.subgoals.push(build);
        }
    }
    for (i, comp) in plan.components().into_iter().enumerate() {
        for id in comp {
            plan.assignment.insert(id, i % ctx.conductors);
        }
    }
    Ok(plan)
}

/// A conductor and its actors. Agent fields are slot indices `0..available`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub id: usize,
    pub conductor: usize,
    pub actors: Vec<usize>,
    /// Sub-goal ids in execution order.
    pub queue: Vec<usize>,
    pub workload: u64,
}

impl Group {
    pub fn size(&self) -> usize {
        1 + self.actors.len()
    }
}

/// Maximum agents across all groups.
pub const MAX_AGENTS: usize = 8;

/// One conductor per independent chain (up to availability and the 8-agent
/// cap); leftover agents join groups as actors, heaviest workload first.
/// Rewrites `plan.assignment` to match.
pub fn auto_organize(plan: &mut Plan, available: usize) -> Result<Vec<Group>, PlanError> {
    if available == 0 {
        return Err(PlanError::NoAgents);
    }
    plan.topological_order()?;
    let agents = available.min(MAX_AGENTS);
    let comps = plan.components();
    let n_groups = comps.len().clamp(1, agents);
    let mut groups: Vec<Group> = (0..n_groups)
        .map(|i| Group { id: i, conductor: i, actors: Vec::new(), queue: Vec::new(), workload: 0 })
        .collect();
    for (i, comp) in comps.iter().enumerate() {
        groups[i % n_groups].queue.extend(comp);
    }
    for g in &mut groups {
        // Keep plan (topological) order inside each queue.
        g.queue.sort_by_key(|id| plan.subgoals.iter().position(|s| s.id == *id));
        g.workload = g.queue.iter().filter_map(|id| plan.get(*id)).map(SubGoal::workload).sum();
        for id in &g.queue {
            plan.assignment.insert(*id, g.id);
        }
    }
    let mut order: Vec<usize> = (0..n_groups).collect();
    order.sort_by(|&a, &b| groups[b].workload.cmp(&groups[a].workload).then(a.cmp(&b)));
    for (j, slot) in (n_groups..agents).enumerate() {
        groups[order[j % n_groups]].actors.push(slot);
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    MissingMaterial { block: BlockId, qty: u32 },
    Unreachable,
    Other(String),
}

impl FailureReason {
    /// Parse `missing <block> x<n>`, `missing:<block>:<n>`, `unreachable`, or
    /// anything else as `Other`.
    pub fn parse(text: &str) -> FailureReason {
        let t = text.trim();
        if t == "unreachable" {
            return FailureReason::Unreachable;
        }
        let parts: Vec<&str> = if let Some(rest) = t.strip_prefix("missing:") {
            rest.split(':').collect()
        } else if let Some(rest) = t.strip_prefix("missing ") {
            rest.split_whitespace().collect()
        } else {
            Vec::new()
        };
        if let [b, n] = parts[..] {
            let qty = n.trim_start_matches('x').parse::<u32>().ok();
            if let (Some(block), Some(qty)) = (crate::world::block_by_name(b), qty) {
                return FailureReason::MissingMaterial { block: block.id, qty };
            }
        }
        FailureReason::Other(t.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMsg {
    pub subgoal: usize,
    pub reason: FailureReason,
}

/// Closed-loop correction. Every call records an attempt on the failed
/// sub-goal; after [`RETRY_BUDGET`] attempts the sub-goal is dropped and
/// listed as unsolvable.
pub fn replan_on_failure(plan: &Plan, failure: &FailureMsg, task: &TaskSpec) -> Result<Plan, PlanError> {
    let _ = task;
    let mut next = plan.clone();
    let idx = next
        .subgoals
        .iter()
        .position(|s| s.id == failure.subgoal)
        .ok_or(PlanError::UnknownSubGoal(failure.subgoal))?;
    next.subgoals[idx].attempts += 1;
    if next.subgoals[idx].attempts >= RETRY_BUDGET {
        next.subgoals[idx].status = Status::Dropped;
        if !next.unsolvable.contains(&failure.subgoal) {
            next.unsolvable.push(failure.subgoal);
        }
        return Ok(next);
    }
    match &failure.reason {
        FailureReason::MissingMaterial { block, qty } => {
            let id = next.next_id();
            let region = if next.area.is_empty() { next.subgoals[idx].region } else { next.area };
            let mut collect = SubGoal::collect(id, *block, *qty, region);
            collect.depends_on = next.subgoals[idx].depends_on.clone();
            next.subgoals[idx].depends_on.push(id);
            let group = next.assignment.get(&failure.subgoal).copied().unwrap_or(0);
            next.assignment.insert(id, group);
            next.subgoals.insert(idx, collect);
        }
        FailureReason::Unreachable => {
            let region = next.subgoals[idx].region;
            if !next.excluded.contains(&region) {
                next.excluded.push(region);
            }
            let sg = &mut next.subgoals[idx];
            match sg.kind {
                SubGoalKind::Navigate => {
                    // Fall back to searching elsewhere.
                    let area = if next.area.is_empty() { region } else { next.area };
                    let sg = &mut next.subgoals[idx];
                    sg.kind = SubGoalKind::Explore;
                    sg.target = Target::Area;
                    sg.region = area;
                }
                _ => {
                    sg.status = Status::Dropped;
                }
            }
        }
        FailureReason::Other(_) => {}
    }
    Ok(next)
}

/// Result of simulating a plan against a world snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Index (in plan order) and description of the first failing step.
    pub first_violation: Option<(usize, String)>,
    /// Material ledger after the simulation.
    pub ledger: BTreeMap<BlockId, i64>,
    pub steps_ok: usize,
    pub steps_total: usize,
}

impl FeasibilityReport {
    /// Fraction of feasible steps; 1.0 for an empty plan.
    pub fn score(&self) -> f64 {
        if self.steps_total == 0 {
            1.0
        } else {
            self.steps_ok as f64 / self.steps_total as f64
        }
    }
}

/// Simulate the pending steps of `plan` with a material ledger seeded from
/// `inventories` and BFS reachability from the agents on `world`.
pub fn dry_run(
    plan: &Plan,
    world: &crate::world::WorldState,
    inventories: &[BTreeMap<BlockId, u32>],
) -> FeasibilityReport {
    use crate::world::path;
    let mut ledger: BTreeMap<BlockId, i64> = BTreeMap::new();
    for inv in inventories {
        for (&b, &n) in inv {
            *ledger.entry(b).or_insert(0) += n as i64;
        }
    }
    let starts: Vec<Pos> = world.agents.iter().map(|a| a.position).collect();
    let reach = path::voxel_distance(world, &starts);
    let reachable = |p: Pos| world.dims.contains(p) && reach[path::voxel_index(world.dims, p)] >= 0;
    let mut in_world: BTreeMap<BlockId, i64> = BTreeMap::new();
    let mut exposed_cache: BTreeMap<BlockId, i64> = BTreeMap::new();
    let mut exposed = |b: BlockId| -> i64 {
        *exposed_cache.entry(b).or_insert_with(|| path::exposed_blocks(world, &reach, b).len() as i64)
    };
    let mut report = FeasibilityReport {
        feasible: true,
        first_violation: None,
        ledger: BTreeMap::new(),
        steps_ok: 0,
        steps_total: 0,
    };
    for (i, sg) in plan.subgoals.iter().enumerate().filter(|(_, s)| s.is_open()) {
        report.steps_total += 1;
        let outcome: Result<(), String> = match (&sg.kind, &sg.target) {
            (SubGoalKind::Collect, Target::Material { block, qty }) => {
                let avail = *in_world.entry(*block).or_insert_with(|| exposed(*block));
                if avail >= *qty as i64 {
                    in_world.insert(*block, avail - *qty as i64);
                    *ledger.entry(*block).or_insert(0) += *qty as i64;
                    Ok(())
                } else {
                    Err(format!("only {avail} reachable {} for {qty}", name(*block)))
                }
            }
            (SubGoalKind::Build, Target::Blueprint { bill, .. }) => {
                let short: Vec<String> = bill
                    .iter()
                    .filter_map(|(b, &n)| {
                        let have = ledger.get(b).copied().unwrap_or(0);
                        (have < n as i64).then(|| format!("missing {} x{}", name(*b), n as i64 - have))
                    })
                    .collect();
                if short.is_empty() {
                    for (b, &n) in bill {
                        *ledger.entry(*b).or_insert(0) -= n as i64;
                    }
                    Ok(())
                } else {
                    Err(short.join(", "))
                }
            }
            (SubGoalKind::Navigate, Target::Column(c)) => {
                let ok = starts.iter().any(|s| {
                    let goal = c.at(s.y);
                    reachable(goal)
                        || crate::world::Dir::HORIZONTAL.iter().any(|d| reachable(goal.step(*d)))
                });
                if ok {
                    Ok(())
                } else {
                    Err(format!("column {c} unreachable"))
                }
            }
            (SubGoalKind::Explore, _) => {
                let ok = sg
                    .region
                    .columns()
                    .any(|c| (0..world.dims.h).any(|y| reachable(c.at(y))));
                if ok {
                    Ok(())
                } else {
                    Err(format!("region {} unreachable", sg.region))
                }
            }
            (kind, target) => Err(format!("{} with target {target:?}", kind.name())),
        };
        match outcome {
            Ok(()) => report.steps_ok += 1,
            Err(msg) => {
                report.feasible = false;
                if report.first_violation.is_none() {
                    report.first_violation = Some((i, msg));
                }
            }
        }
    }
    report.ledger = ledger;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::STONE;

    #[test]
    fn partition_covers_disjointly() {
        let full = Rect::new(0, 0, 32, 32);
        let q = partition(full, 4);
        assert_eq!(q.len(), 4);
        assert!(q.contains(&Rect::new(0, 0, 16, 16)));
        assert!(q.contains(&Rect::new(16, 16, 32, 32)));
        for n in 1..=9 {
            let parts = partition(Rect::new(3, 1, 20, 8), n);
            assert_eq!(parts.iter().map(|r| r.area()).sum::<usize>(), 17 * 7);
            for (i, a) in parts.iter().enumerate() {
                for b in &parts[i + 1..] {
                    assert!(!a.intersects(*b));
                }
            }
        }
        assert_eq!(partition(Rect::new(0, 0, 1, 1), 4).len(), 1);
    }

    #[test]
    fn split_quantity_sums() {
        assert_eq!(split_quantity(10, 3), vec![4, 3, 3]);
        assert_eq!(split_quantity(10, 2).iter().sum::<u32>(), 10);
        assert_eq!(split_quantity(1, 3), vec![1, 0, 0]);
    }

    #[test]
    fn failure_reason_parsing() {
        assert_eq!(FailureReason::parse("missing stone x10"), FailureReason::MissingMaterial { block: STONE, qty: 10 });
        assert_eq!(FailureReason::parse("missing:stone:3"), FailureReason::MissingMaterial { block: STONE, qty: 3 });
        assert_eq!(FailureReason::parse("unreachable"), FailureReason::Unreachable);
        assert_eq!(FailureReason::parse("lost"), FailureReason::Other("lost".into()));
    }

    #[test]
    fn cycles_detected() {
        let mut p = Plan::default();
        let mut a = SubGoal::explore(0, Rect::new(0, 0, 1, 1));
        let mut b = SubGoal::explore(1, Rect::new(0, 0, 1, 1));
        a.depends_on = vec![1];
        b.depends_on = vec![0];
        p.subgoals = vec![a, b];
        assert_eq!(p.topological_order().unwrap_err(), PlanError::Cycle);
        assert_eq!(auto_organize(&mut p, 2).unwrap_err(), PlanError::Cycle);
    }
}
