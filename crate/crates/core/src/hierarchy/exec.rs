use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::plan::{partition, split_quantity, FailureMsg, FailureReason, Plan, SubGoal, SubGoalKind, Target};
use super::PlanError;
use crate::expert::DynamicMap;
use crate::memory::describe_observation;
use crate::policy::{
    featurize, place_material, rule_based_teacher_act, sample_action, scripted_teacher_act, skill_lookup, ExpertView, PolicyError,
    PolicyParams, SampleMode, Skill, StatusToken, TeacherMode,
};
use crate::seed;
use crate::world::{is_solid, Action, BlockId, Dir, Observation, Pos, Role, WorldState};

/// Who decides actions for conductors and actors.
#[derive(Debug, Clone, Copy)]
pub enum PolicyHandle<'a> {
    /// A teacher. Scripted teachers read the true world; the rule-based one
    /// reads only the observation.
    Teacher { world: &'a WorldState, mode: TeacherMode, view: ExpertView<'a> },
    /// The student, acting greedily.
    Student { params: &'a PolicyParams },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub role: Role,
    pub id: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMsg {
    pub subgoal: usize,
    pub tags: Vec<String>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Plan(Plan),
    SubGoal(SubGoal),
    Report(ReportMsg),
    Failure(FailureMsg),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: Endpoint,
    pub to: Endpoint,
    pub payload: Payload,
}

impl Message {
    /// Conductors accept only sub-goals from the manager; the manager accepts
    /// only reports and failures (plans are self-addressed records); actors
    /// accept only sub-goals from a conductor.
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |why: &str| Err(PlanError::InvalidMessage(why.to_string()));
        match (self.to.role, &self.payload) {
            (Role::Conductor, Payload::SubGoal(_)) if self.from.role == Role::Manager => Ok(()),
            (Role::Conductor, _) => bad("conductors only receive sub-goals from the manager"),
            (Role::Manager, Payload::Report(_) | Payload::Failure(_)) => Ok(()),
            (Role::Manager, Payload::Plan(_)) if self.from == self.to => Ok(()),
            (Role::Manager, _) => bad("the manager only receives reports and failures"),
            (Role::Actor, Payload::SubGoal(_)) if self.from.role == Role::Conductor => Ok(()),
            (Role::Actor, _) => bad("actors only receive sub-goals from their conductor"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectiveKind {
    /// Work on a share of the conductor's sub-goal.
    Pursue(SubGoal),
    MineAt(Pos),
    PlaceAt(Pos, BlockId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub epoch: u64,
    pub to: u32,
    pub subgoal: usize,
    pub kind: DirectiveKind,
}

/// Execution-time inputs besides the sub-goal and observations.
#[derive(Debug, Clone, Copy)]
pub struct ExecContext<'a> {
    pub policy: PolicyHandle<'a>,
    pub map: Option<&'a DynamicMap>,
    /// Actor agent ids of the conductor's group.
    pub actors: &'a [u32],
    /// Current directive epoch of the group.
    pub epoch: u64,
    /// First tick on this sub-goal.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConductorOutput {
    Act(Action),
    /// The conductor's own action plus one directive per actor.
    Directives { action: Action, directives: Vec<Directive> },
    Report(ReportMsg),
    Fail(FailureMsg),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorOutput {
    pub action: Action,
    pub failure: Option<FailureMsg>,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub tick: u64,
    pub agent: u32,
    pub role: String,
    pub subgoal: Option<usize>,
    pub action: String,
    pub position: Pos,
    pub messages: Vec<String>,
}

impl TrajectoryRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory record serializes")
    }
}

/// Completion predicate decidable from the agent's own observation and the
/// map. Build completion needs the blueprint and is never decided locally.
pub fn local_completion(subgoal: &SubGoal, obs: &Observation, map: Option<&DynamicMap>) -> bool {
    match (&subgoal.kind, &subgoal.target) {
        (SubGoalKind::Navigate, Target::Column(c)) => obs.position.column() == *c,
        (SubGoalKind::Explore, _) => {
            map.is_some_and(|m| subgoal.region.columns().all(|c| !m.contains(c) || m.is_explored(c)))
        }
        (SubGoalKind::Collect, Target::Material { block, qty }) => {
            obs.inventory.get(block).copied().unwrap_or(0) >= *qty
        }
        _ => false,
    }
}

/// Split a sub-goal into `n` shares: sub-regions for Explore, quantity shares
/// for Collect, build-order parts for Build, copies for Navigate.
pub fn derive_subgoals(subgoal: &SubGoal, n: usize) -> Vec<SubGoal> {
    let n = n.max(1);
    match (&subgoal.kind, &subgoal.target) {
        (SubGoalKind::Explore, _) => {
            let parts = partition(subgoal.region, n);
            (0..n)
                .map(|i| SubGoal { region: parts[i % parts.len().max(1)], ..subgoal.clone() })
                .collect()
        }
        (SubGoalKind::Collect, Target::Material { block, qty }) => split_quantity(*qty, n)
            .into_iter()
            .map(|share| SubGoal { target: Target::Material { block: *block, qty: share }, ..subgoal.clone() })
            .collect(),
        (SubGoalKind::Build, Target::Blueprint { structure, origin, dims, bill, .. }) => (0..n)
            .map(|i| SubGoal {
                target: Target::Blueprint {
                    structure: structure.clone(),
                    origin: *origin,
                    dims: *dims,
                    bill: bill.clone(),
                    part: i as u32,
                    parts: n as u32,
                },
                ..subgoal.clone()
            })
            .collect(),
        _ => vec![subgoal.clone(); n],
    }
}

enum Decision {
    Act(Action),
    Status(StatusToken),
}

fn decide(
    subgoal: &SubGoal,
    obs: &Observation,
    policy: PolicyHandle,
    map: Option<&DynamicMap>,
) -> Result<Decision, PlanError> {
    let token = match policy {
        PolicyHandle::Teacher { world, mode, view } => match mode {
            TeacherMode::RuleBased => rule_based_teacher_act(obs, subgoal),
            TeacherMode::ScriptedExpert | TeacherMode::Scripted => {
                match scripted_teacher_act(world, obs.agent_id, subgoal, &view) {
                    Ok(t) => t,
                    Err(PolicyError::MissingExpert(_)) if mode == TeacherMode::Scripted => {
                        rule_based_teacher_act(obs, subgoal)
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        },
        PolicyHandle::Student { params } => {
            let phi = featurize(obs, subgoal, map).map_err(|e| match e {
                PolicyError::Schema(_) => PlanError::UnsupportedSubGoal(subgoal.kind.name().to_string()),
                other => other.into(),
            })?;
            let mut rng = seed::rng(0);
            let a = sample_action(params, &phi, SampleMode::Greedy, &mut rng)?;
            crate::policy::ACTIONS[a].to_string()
        }
    };
    let skill = skill_lookup(&token)?;
    Ok(match skill {
        Skill::Status(s) => Decision::Status(s),
        other => Decision::Act(other.to_action(place_material(obs, subgoal), &describe_observation(obs).into_iter().collect::<Vec<_>>())),
    })
}

fn failure_for(subgoal: usize, s: StatusToken) -> Option<FailureMsg> {
    let reason = match s {
        StatusToken::Done => return None,
        StatusToken::Unreachable => FailureReason::Unreachable,
        StatusToken::Missing { block, qty } => FailureReason::MissingMaterial { block, qty },
    };
    Some(FailureMsg { subgoal, reason })
}

/// Conductor step for agent `agent_id`. Reads only that agent's observation
/// from `states` (plus the policy and map), so other agents' observations
/// cannot affect the result.
pub fn conductor_execute(
    subgoal: &SubGoal,
    agent_id: u32,
    states: &[Observation],
    ctx: &ExecContext,
) -> Result<ConductorOutput, PlanError> {
    let obs = states.iter().find(|o| o.agent_id == agent_id).ok_or(PlanError::MissingObservation(agent_id))?;
    let report = |success| ReportMsg { subgoal: subgoal.id, tags: describe_observation(obs).into_iter().collect(), success };
    if local_completion(subgoal, obs, ctx.map) {
        return Ok(ConductorOutput::Report(report(true)));
    }
    let shares = derive_subgoals(subgoal, 1 + ctx.actors.len());
    let own = if ctx.actors.is_empty() { subgoal } else { &shares[0] };
    let relocate = ctx.fresh
        && matches!(own.kind, SubGoalKind::Explore | SubGoalKind::Build)
        && !own.region.contains(obs.position.column());
    let decision =
        if relocate { Decision::Act(Action::MoveTo(own.region.center())) } else { decide(own, obs, ctx.policy, ctx.map)? };
    if ctx.actors.is_empty() {
        return Ok(match decision {
            Decision::Act(a) => ConductorOutput::Act(a),
            Decision::Status(StatusToken::Done) => ConductorOutput::Report(report(true)),
            Decision::Status(s) => ConductorOutput::Fail(failure_for(subgoal.id, s).expect("failure status")),
        });
    }
    let action = match decision {
        Decision::Act(a) => a,
        Decision::Status(StatusToken::Done) => Action::NoOp,
        Decision::Status(s) => return Ok(ConductorOutput::Fail(failure_for(subgoal.id, s).expect("failure status"))),
    };
    let directives = ctx
        .actors
        .iter()
        .zip(&shares[1..])
        .map(|(&to, share)| Directive {
            epoch: ctx.epoch,
            to,
            subgoal: subgoal.id,
            kind: DirectiveKind::Pursue(share.clone()),
        })
        .collect();
    Ok(ConductorOutput::Directives { action, directives })
}

fn is_open_in_view(obs: &Observation, d: Dir) -> bool {
    let (dx, dy, dz) = d.offset();
    obs.at(dx, dy, dz).is_some_and(|b| !is_solid(b))
}

/// Act on a positional directive: work the voxel when adjacent, approach it
/// when visible, travel via the map when known, otherwise give up.
fn act_at(obs: &Observation, target: Pos, adjacent: impl Fn(Dir) -> Action, map: Option<&DynamicMap>) -> Option<Action> {
    let p = obs.position;
    if let Some(d) = p.dir_to(target).filter(|d| Dir::HORIZONTAL.contains(d)) {
        return Some(adjacent(d));
    }
    let (dx, dy, dz) = (target.x - p.x, target.y - p.y, target.z - p.z);
    if obs.at(dx, dy, dz).is_some() {
        let cost = |x: i32, y: i32, z: i32| {
            // Distance to the nearest horizontal neighbour of the target.
            let (ax, ay, az) = ((dx - x).abs(), (dy - y).abs(), (dz - z).abs());
            ay + if ax + az == 0 { 1 } else { ax + az - 1 }
        };
        let now = cost(0, 0, 0);
        return Some(
            Dir::ALL
                .into_iter()
                .find(|d| {
                    let (x, y, z) = d.offset();
                    is_open_in_view(obs, *d) && cost(x, y, z) < now
                })
                .map_or(Action::NoOp, Action::Move),
        );
    }
    map.filter(|m| m.contains(target.column()) && m.is_explored(target.column()))
        .map(|_| Action::MoveTo(target.column()))
}

/// Actor step: follows a directive of the current epoch using only its own
/// observation, the policy and the map.
pub fn actor_act(
    directive: &Directive,
    obs: &Observation,
    current_epoch: u64,
    policy: PolicyHandle,
    map: Option<&DynamicMap>,
) -> Result<ActorOutput, PlanError> {
    if directive.epoch != current_epoch {
        return Err(PlanError::StaleDirective { got: directive.epoch, current: current_epoch });
    }
    let lost = || ActorOutput {
        action: Action::NoOp,
        failure: Some(FailureMsg { subgoal: directive.subgoal, reason: FailureReason::Other("target out of view".into()) }),
    };
    let done = |action| ActorOutput { action, failure: None };
    match &directive.kind {
        DirectiveKind::MineAt(t) => Ok(act_at(obs, *t, Action::Mine, map).map_or_else(lost, done)),
        DirectiveKind::PlaceAt(t, b) => Ok(act_at(obs, *t, |d| Action::Place(d, *b), map).map_or_else(lost, done)),
        DirectiveKind::Pursue(sg) => {
            if local_completion(sg, obs, map) {
                return Ok(done(Action::NoOp));
            }
            Ok(match decide(sg, obs, policy, map)? {
                Decision::Act(a) => done(a),
                Decision::Status(s) => ActorOutput { action: Action::NoOp, failure: failure_for(directive.subgoal, s) },
            })
        }
    }
}

/// Summed inventories, used by callers that judge group-level completion.
pub fn pooled_inventory<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> BTreeMap<BlockId, u32> {
    let mut out = BTreeMap::new();
    for o in obs {
        for (&b, &n) in &o.inventory {
            *out.entry(b).or_insert(0) += n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Column, Dims, Rect, STONE};

    fn flat() -> WorldState {
        let mut w = WorldState::empty(Dims::new(12, 12, 4), 3);
        for z in 0..12 {
            for x in 0..12 {
                w.set(Pos::new(x, 0, z), STONE);
            }
        }
        w.add_agent(0, Pos::new(1, 1, 1), Role::Conductor).unwrap();
        w.add_agent(1, Pos::new(8, 1, 8), Role::Conductor).unwrap();
        w.add_agent(2, Pos::new(5, 1, 2), Role::Actor).unwrap();
        w
    }

    fn ctx<'a>(w: &'a WorldState, actors: &'a [u32]) -> ExecContext<'a> {
        ExecContext {
            policy: PolicyHandle::Teacher { world: w, mode: TeacherMode::ScriptedExpert, view: ExpertView::default() },
            map: None,
            actors,
            epoch: 0,
            fresh: false,
        }
    }

    #[test]
    fn reached_target_reports_success() {
        let w = flat();
        let states: Vec<_> = (0..3).map(|i| w.observe(i).unwrap()).collect();
        let sg = SubGoal::navigate(4, Column::new(1, 1));
        let out = conductor_execute(&sg, 0, &states, &ctx(&w, &[])).unwrap();
        assert!(matches!(out, ConductorOutput::Report(ReportMsg { subgoal: 4, success: true, .. })));
    }

    #[test]
    fn other_observations_do_not_matter() {
        let w = flat();
        let mut states: Vec<_> = (0..3).map(|i| w.observe(i).unwrap()).collect();
        let sg = SubGoal::navigate(0, Column::new(6, 6));
        let a = conductor_execute(&sg, 0, &states, &ctx(&w, &[2])).unwrap();
        states.reverse();
        states[0].tick = 99;
        let b = conductor_execute(&sg, 0, &states, &ctx(&w, &[2])).unwrap();
        assert_eq!(a, b);
        assert!(matches!(a, ConductorOutput::Directives { ref directives, .. } if directives.len() == 1));
    }

    #[test]
    fn actor_directives() {
        let mut w = flat();
        w.set(Pos::new(6, 1, 2), STONE);
        let obs = w.observe(2).unwrap();
        let policy = ctx(&w, &[]).policy;
        let mine = Directive { epoch: 1, to: 2, subgoal: 0, kind: DirectiveKind::MineAt(Pos::new(6, 1, 2)) };
        assert_eq!(actor_act(&mine, &obs, 1, policy, None).unwrap().action, Action::Mine(Dir::East));
        assert_eq!(actor_act(&mine, &obs, 2, policy, None).unwrap_err().kind(), "StaleDirective");
        let far = Directive { kind: DirectiveKind::MineAt(Pos::new(11, 1, 11)), ..mine };
        let out = actor_act(&far, &obs, 1, policy, None).unwrap();
        assert_eq!(out.action, Action::NoOp);
        assert!(out.failure.is_some());
    }

    #[test]
    fn message_rules() {
        let m = Endpoint { role: Role::Manager, id: 0 };
        let c = Endpoint { role: Role::Conductor, id: 1 };
        let sg = Payload::SubGoal(SubGoal::explore(0, Rect::new(0, 0, 2, 2)));
        assert!(Message { from: m, to: c, payload: sg.clone() }.validate().is_ok());
        assert!(Message { from: c, to: m, payload: sg }.validate().is_err());
        let rep = Payload::Report(ReportMsg { subgoal: 0, tags: vec![], success: true });
        assert!(Message { from: c, to: m, payload: rep.clone() }.validate().is_ok());
        assert!(Message { from: m, to: c, payload: rep }.validate().is_err());
    }

    #[test]
    fn derived_shares_cover_the_goal() {
        let sg = SubGoal::collect(3, STONE, 10, Rect::new(0, 0, 4, 4));
        let qty: u32 = derive_subgoals(&sg, 3)
            .iter()
            .map(|s| match s.target {
                Target::Material { qty, .. } => qty,
                _ => 0,
            })
            .sum();
        assert_eq!(qty, 10);
        let ex = derive_subgoals(&SubGoal::explore(0, Rect::new(0, 0, 8, 8)), 4);
        assert_eq!(ex.iter().map(|s| s.region.area()).sum::<usize>(), 64);
    }
}
