use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use super::metrics::{code_fid, rotation_histograms, voxel_iou};
use super::{EpisodeConfig, EpisodeResult, TaskError, TaskKind};
use crate::expert::{
    code_histogram, expert_augment, observation_reports, DynamicMap, Expert, ExpertError, GenConfig, Knowledge,
    Occupancy,
};
use crate::hierarchy::{
    actor_act, auto_organize, conductor_execute, manager_plan, replan_on_failure, ConductorOutput, ExecContext,
    FailureMsg, GoalQuery, Intent, Plan, PlanContext, PolicyHandle, Status, SubGoalKind, TaskSpec, TrajectoryRecord,
};
use crate::policy::{ExpertView, PolicyParams, TeacherMode};
use crate::world::{
    gen_world, Action, BlockId, Dims, Observation, Pos, Rect, Role, WorldState, AIR, PLANKS,
};

/// Who drives conductors and actors during an episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Scripted teacher. With the expert it reads the dynamic map and the
    /// generated blueprint; without it, it falls back to rule-based
    /// exploration and builds a fallback slab.
    Teacher { expert: bool },
    /// Rule-based teacher reading only observations.
    RuleBased,
    /// A student policy acting greedily. It never sees a blueprint.
    Student(&'a PolicyParams),
}

/// Start kit of each material per agent in building episodes.
pub const KIT_PER_MATERIAL: u32 = 512;

/// Side of the fallback slab built without the expert.
const SLAB_SIDE: i32 = 5;

/// Builtin template library with its codebook, learned once per process.
pub fn shared_expert() -> Result<&'static Expert, TaskError> {
    static EXPERT: OnceLock<Result<Expert, ExpertError>> = OnceLock::new();
    EXPERT.get_or_init(|| Expert::builtin(0)).as_ref().map_err(|e| e.clone().into())
}

/// What a builder without the expert falls back to: a one-layer square of the
/// first material named in the task (planks if none).
pub fn fallback_slab(task: &TaskSpec) -> Occupancy {
    let material = match task.intent() {
        Ok(Intent::Build { materials, .. }) => materials.first().copied().unwrap_or(PLANKS),
        _ => PLANKS,
    };
    let mut occ = Occupancy::empty(Dims::new(SLAB_SIDE, SLAB_SIDE, 1));
    for z in 0..SLAB_SIDE {
        for x in 0..SLAB_SIDE {
            occ.set(x, 0, z, material);
        }
    }
    occ
}

struct BuildSite {
    origin: Pos,
    /// Generated target; the episode is scored against it.
    target: Occupancy,
    /// What the manager plans and the teacher builds.
    plan_blueprint: Occupancy,
}

fn prepare_site(world: &mut WorldState, ids: &[u32], target: Occupancy, plan_blueprint: Occupancy, ground: i32) -> Result<BuildSite, TaskError> {
    let d = world.dims;
    let td = target.dims;
    let origin = Pos::new(d.w / 2 + 4, ground, d.l / 2 - td.l / 2);
    if origin.x + td.w + 1 > d.w || origin.z < 1 || origin.z + td.l + 1 > d.l || ground + td.h > d.h {
        return Err(TaskError::Config(format!("world {}x{}x{} too small for a {}x{}x{} site", d.w, d.l, d.h, td.w, td.l, td.h)));
    }
    for y in ground..d.h {
        for z in origin.z - 1..=origin.z + td.l {
            for x in origin.x - 1..=origin.x + td.w {
                world.set(Pos::new(x, y, z), AIR);
            }
        }
    }
    let mut kit: BTreeSet<BlockId> = target.material_bill().into_keys().collect();
    kit.extend(plan_blueprint.material_bill().into_keys());
    for &id in ids {
        for &b in &kit {
            world.give(id, b, KIT_PER_MATERIAL)?;
        }
    }
    Ok(BuildSite { origin, target, plan_blueprint })
}

/// The world region at `origin` with the dimensions of `dims`.
fn extract(world: &WorldState, origin: Pos, dims: Dims) -> Occupancy {
    let mut occ = Occupancy::empty(dims);
    for y in 0..dims.h {
        for z in 0..dims.l {
            for x in 0..dims.w {
                occ.set(x, y, z, world.get(origin.offset(x, y, z)));
            }
        }
    }
    occ
}

fn goal_seen(query: &GoalQuery, obs: &Observation) -> bool {
    match query {
        GoalQuery::Image(g) => obs.top_view == *g,
        GoalQuery::Object(b) => obs.s_v.contains(b),
        GoalQuery::Audio(e) => obs.s_a.iter().any(|c| c.event == *e),
    }
}

fn collection_completion(bill: &[(BlockId, u32)], pooled: &BTreeMap<BlockId, u32>) -> f64 {
    let required: u64 = bill.iter().map(|&(_, n)| n as u64).sum();
    if required == 0 {
        return 1.0;
    }
    let got: u64 = bill.iter().map(|&(b, n)| pooled.get(&b).copied().unwrap_or(0).min(n) as u64).sum();
    got as f64 / required as f64
}

struct Episode<'a> {
    cfg: &'a EpisodeConfig,
    controller: Controller<'a>,
    intent: Intent,
    world: WorldState,
    ids: Vec<u32>,
    map: DynamicMap,
    site: Option<BuildSite>,
    found: BTreeSet<Pos>,
    trace: Option<Vec<TrajectoryRecord>>,
    ticks: u64,
}

impl<'a> Episode<'a> {
    fn uses_expert(&self) -> bool {
        !matches!(self.controller, Controller::Teacher { expert: false } | Controller::RuleBased)
    }

    fn observe_all(&self) -> Result<Vec<Observation>, TaskError> {
        let explored = self.map.explored_count();
        let total = (self.world.dims.w * self.world.dims.l) as usize;
        let mut out = Vec::with_capacity(self.ids.len());
        for &id in &self.ids {
            let mut obs = self.world.observe(id)?;
            obs.s_p.insert("unexplored".into(), format!("{} of {total} columns", total - explored));
            out.push(obs);
        }
        Ok(out)
    }

    fn absorb(&mut self, states: &[Observation]) -> Result<(), TaskError> {
        let mut reports = Vec::new();
        for obs in states {
            reports.extend(observation_reports(obs, self.world.dims));
            if let Intent::Search(b) = self.intent {
                self.found.extend(obs.positions_of(b));
            }
        }
        self.map.update(&reports)?;
        Ok(())
    }

    fn policy(&self) -> PolicyHandle<'_> {
        let blueprint = self.site.as_ref().map(|s| &s.plan_blueprint);
        match self.controller {
            Controller::Teacher { expert: true } => PolicyHandle::Teacher {
                world: &self.world,
                mode: TeacherMode::ScriptedExpert,
                view: ExpertView { map: Some(&self.map), blueprint },
            },
            Controller::Teacher { expert: false } => PolicyHandle::Teacher {
                world: &self.world,
                mode: TeacherMode::Scripted,
                view: ExpertView { map: None, blueprint },
            },
            Controller::RuleBased => {
                PolicyHandle::Teacher { world: &self.world, mode: TeacherMode::RuleBased, view: ExpertView::default() }
            }
            Controller::Student(params) => PolicyHandle::Student { params },
        }
    }

    fn exec_map(&self) -> Option<&DynamicMap> {
        self.uses_expert().then_some(&self.map)
    }

    fn goal_reached(&self, states: &[Observation]) -> bool {
        match &self.intent {
            Intent::Find(q) => states.iter().any(|o| goal_seen(q, o)),
            Intent::Collect(bill) => {
                let pooled = crate::hierarchy::pooled_inventory(states);
                collection_completion(bill, &pooled) >= 1.0
            }
            Intent::Build { .. } => self.site.as_ref().is_some_and(|s| {
                extract(&self.world, s.origin, s.plan_blueprint.dims) == s.plan_blueprint
                    || extract(&self.world, s.origin, s.target.dims) == s.target
            }),
            Intent::Explore => self.map.is_complete(),
            Intent::Search(_) => false,
        }
    }

    fn plan(&self, states: &[Observation], excluded: &[Rect]) -> Result<Plan, TaskError> {
        let ctx = PlanContext {
            dims: self.world.dims,
            conductors: self.cfg.conductors(),
            map: self.exec_map(),
            blueprint: self.site.as_ref().map(|s| (&s.plan_blueprint, s.origin)),
            excluded,
        };
        Ok(manager_plan(states, &self.cfg.goal, &ctx)?)
    }

    fn record(&mut self, agent: u32, role: Role, subgoal: Option<usize>, action: &Action, messages: Vec<String>) {
        let Some(trace) = self.trace.as_mut() else { return };
        let position = self.world.agent(agent).map(|a| a.position).unwrap_or(Pos::new(0, 0, 0));
        trace.push(TrajectoryRecord {
            tick: self.ticks,
            agent,
            role: role.name().to_string(),
            subgoal,
            action: action.to_string(),
            position,
            messages,
        });
    }

    /// Mark build sub-goals done once the blueprint stands.
    fn judge_build(&self, plan: &mut Plan) {
        if let Some(s) = &self.site {
            if extract(&self.world, s.origin, s.plan_blueprint.dims) == s.plan_blueprint {
                let ids: Vec<usize> =
                    plan.subgoals.iter().filter(|g| g.kind == SubGoalKind::Build && g.is_open()).map(|g| g.id).collect();
                for id in ids {
                    plan.mark(id, Status::Done);
                }
            }
        }
    }

    /// One execution tick. Returns the updated plan.
    fn tick(
        &mut self,
        mut plan: Plan,
        groups: &[crate::hierarchy::Group],
        current: &mut BTreeMap<u32, usize>,
        epochs: &mut [u64],
    ) -> Result<Plan, TaskError> {
        let states = self.observe_all()?;
        let mut actions: Vec<(u32, Role, Option<usize>, Action, Vec<String>)> = Vec::new();
        let mut reports = Vec::new();
        let mut failures: Vec<FailureMsg> = Vec::new();
        {
            let policy = self.policy();
            let map = self.exec_map();
            for g in groups {
                let conductor = self.ids[g.conductor];
                let actors: Vec<u32> = g.actors.iter().map(|&s| self.ids[s]).collect();
                let next = plan
                    .subgoals
                    .iter()
                    .find(|s| plan.assignment.get(&s.id) == Some(&g.id) && plan.is_ready(s.id));
                let Some(sg) = next else {
                    actions.push((conductor, Role::Conductor, None, Action::NoOp, Vec::new()));
                    for &a in &actors {
                        actions.push((a, Role::Actor, None, Action::NoOp, Vec::new()));
                    }
                    continue;
                };
                let fresh = current.get(&conductor) != Some(&sg.id);
                if fresh {
                    current.insert(conductor, sg.id);
                    epochs[g.id] += 1;
                }
                let ctx = ExecContext { policy, map, actors: &actors, epoch: epochs[g.id], fresh };
                let mut idle_actors = true;
                match conductor_execute(sg, conductor, &states, &ctx)? {
                    ConductorOutput::Act(a) => actions.push((conductor, Role::Conductor, Some(sg.id), a, Vec::new())),
                    ConductorOutput::Directives { action, directives } => {
                        actions.push((conductor, Role::Conductor, Some(sg.id), action, Vec::new()));
                        for d in directives {
                            let obs = states.iter().find(|o| o.agent_id == d.to).expect("actor observation");
                            let out = actor_act(&d, obs, epochs[g.id], policy, map)?;
                            let msgs = out.failure.iter().map(|f| format!("failure:{:?}", f.reason)).collect();
                            actions.push((d.to, Role::Actor, Some(sg.id), out.action, msgs));
                        }
                        idle_actors = false;
                    }
                    ConductorOutput::Report(r) => {
                        let msg = format!("report:{}:{}", r.subgoal, r.success);
                        actions.push((conductor, Role::Conductor, Some(sg.id), Action::NoOp, vec![msg]));
                        reports.push(r);
                    }
                    ConductorOutput::Fail(f) => {
                        let msg = format!("failure:{}:{:?}", f.subgoal, f.reason);
                        actions.push((conductor, Role::Conductor, Some(sg.id), Action::NoOp, vec![msg]));
                        failures.push(f);
                    }
                }
                if idle_actors {
                    for &a in &actors {
                        actions.push((a, Role::Actor, Some(sg.id), Action::NoOp, Vec::new()));
                    }
                }
            }
        }
        for r in reports {
            plan.mark(r.subgoal, if r.success { Status::Done } else { Status::Dropped });
        }
        for f in failures {
            plan = replan_on_failure(&plan, &f, &self.cfg.goal)?;
        }
        // Fixed round-robin order within the tick.
        actions.sort_by_key(|a| a.0);
        for (agent, role, subgoal, action, msgs) in actions {
            let mut msgs = msgs;
            if let Err(e) = self.world.step(agent, &action) {
                msgs.push(format!("rejected:{}", e.kind()));
            }
            self.record(agent, role, subgoal, &action, msgs);
        }
        self.ticks += 1;
        let after = self.observe_all()?;
        self.absorb(&after)?;
        self.judge_build(&mut plan);
        Ok(plan)
    }

    fn run(&mut self) -> Result<usize, TaskError> {
        let states = self.observe_all()?;
        self.absorb(&states)?;
        let mut plan: Option<Plan> = None;
        let mut excluded: Vec<Rect> = Vec::new();
        let mut current: BTreeMap<u32, usize> = BTreeMap::new();
        let mut epochs = vec![0u64; self.ids.len()];
        for iteration in 1..=self.cfg.cap {
            let states = self.observe_all()?;
            if self.goal_reached(&states) {
                return Ok(iteration);
            }
            let mut active = match plan.take() {
                Some(p) if !p.is_complete() => p,
                _ => {
                    let p = self.plan(&states, &excluded)?;
                    current.clear();
                    p
                }
            };
            excluded = active.excluded.clone();
            if active.subgoals.iter().all(|s| !s.is_open()) {
                // Nothing left to do.
                return Ok(iteration);
            }
            let mut open = Plan {
                subgoals: active.subgoals.iter().filter(|s| s.is_open()).cloned().collect(),
                ..active.clone()
            };
            let groups = auto_organize(&mut open, self.ids.len())?;
            for (id, g) in open.assignment {
                active.assignment.insert(id, g);
            }
            for g in &groups {
                self.world.set_role(self.ids[g.conductor], Role::Conductor)?;
                for &a in &g.actors {
                    self.world.set_role(self.ids[a], Role::Actor)?;
                }
            }
            for _ in 0..self.cfg.ticks_per_iteration {
                active = self.tick(active, &groups, &mut current, &mut epochs)?;
                let states = self.observe_all()?;
                if self.goal_reached(&states) {
                    return Ok(iteration);
                }
                if active.is_complete() {
                    break;
                }
            }
            plan = Some(active);
        }
        Ok(self.cfg.cap)
    }

    fn result(&self, iterations_used: usize) -> Result<EpisodeResult, TaskError> {
        let states = self.observe_all()?;
        let mut r = EpisodeResult {
            iterations_used,
            success: false,
            blocks_found: 0,
            area: self.map.explored_count(),
            completion: 0.0,
            iou: 0.0,
            code_fid: 0.0,
            unsatisfiable: false,
        };
        let total_columns = (self.world.dims.w * self.world.dims.l) as f64;
        match &self.intent {
            Intent::Find(_) => {
                r.success = self.goal_reached(&states);
                r.completion = if r.success { 1.0 } else { 0.0 };
            }
            Intent::Search(b) => {
                r.blocks_found = self.found.len();
                r.success = r.blocks_found > 0;
                let total = self.world.count_blocks(*b) + self.found.iter().filter(|p| self.world.get(**p) != *b).count();
                r.completion = if total == 0 { 1.0 } else { r.blocks_found as f64 / total as f64 };
            }
            Intent::Explore => {
                r.success = self.map.is_complete();
                r.completion = r.area as f64 / total_columns;
            }
            Intent::Collect(bill) => {
                let pooled = crate::hierarchy::pooled_inventory(&states);
                r.completion = collection_completion(bill, &pooled);
                r.success = r.completion >= 1.0;
                r.unsatisfiable = bill.iter().any(|&(b, n)| self.world.total_with_inventories(b) < n as u64);
            }
            Intent::Build { .. } => {
                let site = self.site.as_ref().expect("building episodes have a site");
                let built = extract(&self.world, site.origin, site.target.dims);
                r.iou = voxel_iou(&built, &site.target)?;
                r.success = r.iou >= 1.0;
                let target_blocks = site.target.count_nonempty().max(1);
                let placed = site.target.blocks().filter(|(p, b)| built.get(p.x, p.y, p.z) == *b).count();
                r.completion = placed as f64 / target_blocks as f64;
                let expert = shared_expert()?;
                let corpus: Vec<Vec<f64>> = expert
                    .library
                    .templates()
                    .iter()
                    .map(|t| code_histogram(&t.occupancy, &expert.codebook))
                    .collect::<Result<_, _>>()?;
                r.code_fid = code_fid(&rotation_histograms(&built, &expert.codebook)?, &corpus)?;
            }
        }
        Ok(r)
    }
}

fn setup<'a>(
    cfg: &'a EpisodeConfig,
    controller: Controller<'a>,
    expert: &Expert,
    trace: bool,
) -> Result<Episode<'a>, TaskError> {
    let intent = cfg.validate()?;
    let mut wcfg = cfg.world.clone();
    wcfg.agents = cfg.agents;
    let mut world = gen_world(cfg.seed, &wcfg)?;
    let ids: Vec<u32> = world.agents.iter().map(|a| a.agent_id).collect();
    let map = DynamicMap::new(world.dims);
    let site = if let Intent::Build { .. } = intent {
        let gen = GenConfig { seed: cfg.seed, ..GenConfig::default() };
        let bundles = expert_augment(&cfg.goal, expert, &map, &gen)?;
        let target = bundles
            .into_iter()
            .find_map(|b| match b.knowledge {
                Knowledge::Blueprint(bp) => Some(bp.occupancy),
                Knowledge::Map(_) => None,
            })
            .ok_or(ExpertError::EmptyLibrary)?;
        let plan_blueprint = match controller {
            Controller::Teacher { expert: false } => fallback_slab(&cfg.goal),
            _ => target.clone(),
        };
        Some(prepare_site(&mut world, &ids, target, plan_blueprint, wcfg.walk_layer())?)
    } else {
        None
    };
    Ok(Episode {
        cfg,
        controller,
        intent,
        world,
        ids,
        map,
        site,
        found: BTreeSet::new(),
        trace: trace.then(Vec::new),
        ticks: 0,
    })
}

/// Run one episode with an explicit template library and codebook.
pub fn run_episode_with(cfg: &EpisodeConfig, controller: Controller, expert: &Expert) -> Result<EpisodeResult, TaskError> {
    let mut ep = setup(cfg, controller, expert, false)?;
    let used = ep.run()?;
    ep.result(used)
}

/// Run one episode.
pub fn run_episode(cfg: &EpisodeConfig, controller: Controller) -> Result<EpisodeResult, TaskError> {
    run_episode_with(cfg, controller, shared_expert()?)
}

/// Run one episode and return its trajectory log (one record per agent per tick).
pub fn run_episode_traced(
    cfg: &EpisodeConfig,
    controller: Controller,
) -> Result<(EpisodeResult, Vec<TrajectoryRecord>), TaskError> {
    let mut ep = setup(cfg, controller, shared_expert()?, true)?;
    let used = ep.run()?;
    let r = ep.result(used)?;
    Ok((r, ep.trace.unwrap_or_default()))
}

fn expect_kind(cfg: &EpisodeConfig, kind: TaskKind) -> Result<(), TaskError> {
    if cfg.kind == kind {
        Ok(())
    } else {
        Err(TaskError::Config(format!("expected a {} episode, got {}", kind.name(), cfg.kind.name())))
    }
}

/// Success when some agent's observation matches the goal.
pub fn run_goal_search(cfg: &EpisodeConfig, controller: Controller) -> Result<EpisodeResult, TaskError> {
    expect_kind(cfg, TaskKind::GoalSearch)?;
    run_episode(cfg, controller)
}

/// Distinct target blocks observed within the iteration budget.
pub fn run_block_search(cfg: &EpisodeConfig, controller: Controller) -> Result<EpisodeResult, TaskError> {
    expect_kind(cfg, TaskKind::BlockSearch)?;
    run_episode(cfg, controller)
}

/// Explored column count at the end of the budget.
pub fn run_map_explore(cfg: &EpisodeConfig, controller: Controller) -> Result<EpisodeResult, TaskError> {
    expect_kind(cfg, TaskKind::MapExplore)?;
    run_episode(cfg, controller)
}

/// Fraction of the bill held across all agents.
pub fn run_material_collection(cfg: &EpisodeConfig, controller: Controller) -> Result<EpisodeResult, TaskError> {
    expect_kind(cfg, TaskKind::MaterialCollect)?;
    run_episode(cfg, controller)
}

/// Voxel IoU of the built site against the generated target, plus code-FID
/// of the built structure against the template corpus.
pub fn run_building_creation(cfg: &EpisodeConfig, controller: Controller) -> Result<EpisodeResult, TaskError> {
    expect_kind(cfg, TaskKind::BuildingCreate)?;
    run_episode(cfg, controller)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldConfig;

    fn small(kind: TaskKind, seed: u64, agents: usize) -> EpisodeConfig {
        let mut c = EpisodeConfig::new(kind, seed, agents);
        c.world = WorldConfig { width: 24, length: 24, ..WorldConfig::default() };
        c
    }

    #[test]
    fn zero_iterations_sees_only_spawn() {
        let mut c = small(TaskKind::MapExplore, 3, 1);
        c.cap = 0;
        let r = run_map_explore(&c, Controller::Teacher { expert: true }).unwrap();
        assert_eq!(r.iterations_used, 0);
        assert_eq!(r.area, 25);
    }

    #[test]
    fn exploration_grows_and_is_deterministic() {
        let c = small(TaskKind::MapExplore, 4, 2);
        let a = run_map_explore(&c, Controller::Teacher { expert: true }).unwrap();
        let b = run_map_explore(&c, Controller::Teacher { expert: true }).unwrap();
        assert_eq!(a, b);
        assert!(a.area > 25 && a.area <= 24 * 24);
        assert!(a.iterations_used <= 5);
    }

    #[test]
    fn empty_bill_is_complete() {
        let c = small(TaskKind::MaterialCollect, 1, 1).with_goal(TaskSpec::from_words("collect"));
        let r = run_material_collection(&c, Controller::Teacher { expert: true }).unwrap();
        assert_eq!(r.completion, 1.0);
    }

    #[test]
    fn missing_material_is_flagged() {
        let mut c = small(TaskKind::MaterialCollect, 1, 1).with_goal(TaskSpec::from_words("collect diamond:3"));
        c.world.diamond_density = 0.0;
        c.cap = 2;
        let r = run_material_collection(&c, Controller::Teacher { expert: true }).unwrap();
        assert_eq!(r.completion, 0.0);
        assert!(r.unsatisfiable);
    }

    #[test]
    fn wrong_runner_is_config_error() {
        let c = small(TaskKind::MapExplore, 1, 1);
        assert_eq!(run_goal_search(&c, Controller::RuleBased).unwrap_err().kind(), "ConfigError");
    }

    #[test]
    fn empty_library_is_reported() {
        let expert = shared_expert().unwrap();
        let empty = Expert { library: Default::default(), codebook: expert.codebook.clone() };
        let c = small(TaskKind::BuildingCreate, 1, 1);
        let err = run_episode_with(&c, Controller::Teacher { expert: true }, &empty).unwrap_err();
        assert_eq!(err.kind(), "EmptyLibrary");
    }
}
