use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dpo_epoch, DistillConfig, DistillError, PreferenceDataset, PreferencePair};
use crate::expert::{observation_reports, DynamicMap, Occupancy};
use crate::hierarchy::{local_completion, SubGoal, SubGoalKind, Target};
use crate::memory::describe_observation;
use crate::policy::{
    featurize, place_material, rule_based_teacher_act, sample_action, scripted_teacher_act, skill_lookup, ExpertView,
    FeatureVector, PolicyError, PolicyParams, SampleMode, Skill, TeacherConfig, TeacherMode,
};
use crate::seed::{self, SimRng};
use crate::world::{Observation, WorldState};

/// A single-agent training or evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub world: WorldState,
    pub agent: u32,
    pub subgoal: SubGoal,
    /// Shared map, updated from the agent's observations every step.
    pub map: Option<DynamicMap>,
    /// Construction target for Build sub-goals.
    pub blueprint: Option<Occupancy>,
    pub max_steps: usize,
}

impl Episode {
    pub fn new(world: WorldState, agent: u32, subgoal: SubGoal, max_steps: usize) -> Self {
        Episode { world, agent, subgoal, map: None, blueprint: None, max_steps }
    }

    pub fn observe(&self) -> Result<Observation, DistillError> {
        Ok(self.world.observe(self.agent)?)
    }

    fn refresh_map(&mut self) -> Result<(), DistillError> {
        if self.map.is_some() {
            let obs = self.observe()?;
            let reports = observation_reports(&obs, self.world.dims);
            if let Some(m) = self.map.as_mut() {
                m.update(&reports).map_err(|e| DistillError::InvalidConfig(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Whether the sub-goal holds in the current world.
    pub fn succeeded(&self) -> Result<bool, DistillError> {
        if let (SubGoalKind::Build, Target::Blueprint { origin, .. }, Some(occ)) =
            (&self.subgoal.kind, &self.subgoal.target, &self.blueprint)
        {
            return Ok(occ.blocks().all(|(p, b)| self.world.get(origin.offset(p.x, p.y, p.z)) == b));
        }
        let obs = self.observe()?;
        Ok(local_completion(&self.subgoal, &obs, self.map.as_ref()))
    }

    /// Teacher token for the current state.
    pub fn teacher_token(&self, teacher: TeacherConfig) -> Result<String, PolicyError> {
        let obs = self.world.observe(self.agent)?;
        match teacher.mode {
            TeacherMode::RuleBased => Ok(rule_based_teacher_act(&obs, &self.subgoal)),
            TeacherMode::ScriptedExpert | TeacherMode::Scripted => {
                let view = ExpertView {
                    map: if teacher.mode == TeacherMode::ScriptedExpert { self.map.as_ref() } else { None },
                    blueprint: self.blueprint.as_ref(),
                };
                match scripted_teacher_act(&self.world, self.agent, &self.subgoal, &view) {
                    Err(PolicyError::MissingExpert(_)) if teacher.mode == TeacherMode::Scripted => {
                        Ok(rule_based_teacher_act(&obs, &self.subgoal))
                    }
                    other => other,
                }
            }
        }
    }

    /// Execute a skill. Rejected actions (mining air, placing into an
    /// occupied cell) leave the world unchanged.
    pub fn apply(&mut self, skill: &Skill) -> Result<(), DistillError> {
        let obs = self.observe()?;
        let tags: Vec<String> = describe_observation(&obs).into_iter().collect();
        let action = skill.to_action(place_material(&obs, &self.subgoal), &tags);
        let _ = self.world.step(self.agent, &action);
        self.refresh_map()
    }
}

/// Who acts during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum Performer<'a> {
    Teacher(TeacherConfig),
    Student(&'a PolicyParams, SampleMode),
}

fn student_skill(params: &PolicyParams, phi: &FeatureVector, mode: SampleMode, rng: &mut SimRng) -> Result<(usize, Skill), DistillError> {
    let a = sample_action(params, phi, mode, rng)?;
    let skill = Skill::from_index(a).ok_or_else(|| PolicyError::UnknownSkill(format!("action index {a}")))?;
    Ok((a, skill))
}

/// Run one episode to success or its step cap. Returns whether it succeeded
/// and the number of steps taken.
pub fn run_episode(ep: &mut Episode, performer: Performer, rng: &mut SimRng) -> Result<(bool, usize), DistillError> {
    ep.refresh_map()?;
    for step in 0..ep.max_steps {
        if ep.succeeded()? {
            return Ok((true, step));
        }
        let skill = match performer {
            Performer::Teacher(t) => {
                let s = skill_lookup(&ep.teacher_token(t)?)?;
                if s.action_index().is_none() {
                    // Status tokens end the teacher's episode.
                    return Ok((ep.succeeded()?, step));
                }
                s
            }
            Performer::Student(params, mode) => {
                let obs = ep.observe()?;
                let phi = featurize(&obs, &ep.subgoal, ep.map.as_ref())?;
                student_skill(params, &phi, mode, rng)?.1
            }
        };
        ep.apply(&skill)?;
    }
    Ok((ep.succeeded()?, ep.max_steps))
}

/// Success rate of a performer over the episodes built by `factory`.
pub fn evaluate(
    mut factory: impl FnMut(usize) -> Result<Episode, DistillError>,
    episodes: usize,
    performer: Performer,
    seed_value: u64,
) -> Result<f64, DistillError> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let mut wins = 0;
    for e in 0..episodes {
        let mut ep = factory(e)?;
        let mut rng = seed::rng(seed::derive_index(seed_value, e as u64));
        if run_episode(&mut ep, performer, &mut rng)?.0 {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes as f64)
}

/// Teacher demonstrations `(features, action index)` for behavior cloning.
/// Status tokens are not demonstrations and are skipped.
pub fn collect_demos(
    mut factory: impl FnMut(usize) -> Result<Episode, DistillError>,
    episodes: usize,
    teacher: TeacherConfig,
) -> Result<Vec<(FeatureVector, usize)>, DistillError> {
    let mut demos = Vec::new();
    for e in 0..episodes {
        let mut ep = factory(e)?;
        ep.refresh_map()?;
        for _ in 0..ep.max_steps {
            if ep.succeeded()? {
                break;
            }
            let skill = skill_lookup(&ep.teacher_token(teacher)?)?;
            let Some(a) = skill.action_index() else { break };
            let obs = ep.observe()?;
            demos.push((featurize(&obs, &ep.subgoal, ep.map.as_ref())?, a));
            ep.apply(&skill)?;
        }
    }
    Ok(demos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub states: usize,
    pub supervised: usize,
    pub pairs_added: usize,
    pub dataset_size: usize,
    /// Fraction of supervised states where the student's sample matched.
    pub agreement: f64,
    /// Mean preference loss over the last training epoch.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerOutcome {
    pub params: PolicyParams,
    pub dataset: PreferenceDataset,
    pub rounds: Vec<RoundStats>,
}

/// DAgger with the preference objective. Starts from `reference`; in round
/// `i` the executed action is the teacher's with probability
/// `mixing_decay^i`, otherwise the student's sample. Every state where the
/// student's sample differs from the teacher's action adds a pair; each round
/// ends with `epochs_per_round` passes of per-pair gradient steps over the
/// whole aggregated dataset.
pub fn dagger_distill(
    mut env_factory: impl FnMut(u32, usize) -> Result<Episode, DistillError>,
    teacher: TeacherConfig,
    reference: &PolicyParams,
    config: &DistillConfig,
    rng: &mut SimRng,
) -> Result<DaggerOutcome, DistillError> {
    config.validate()?;
    teacher.validate()?;
    let mut theta = reference.clone();
    let mut dataset = PreferenceDataset::default();
    let mut rounds = Vec::new();
    for round in 0..config.dagger_rounds {
        let round_seed: u64 = rng.gen();
        let teacher_prob = config.mixing_decay.powi(round as i32);
        let (mut states, mut supervised, mut agree, mut added) = (0, 0, 0, 0);
        for e in 0..config.rollouts_per_round {
            let mut ep = env_factory(round, e)?;
            let mut ep_rng = seed::rng(seed::derive_index(round_seed, e as u64));
            ep.refresh_map()?;
            for _ in 0..ep.max_steps {
                if ep.succeeded()? {
                    break;
                }
                states += 1;
                let obs = ep.observe()?;
                let phi = featurize(&obs, &ep.subgoal, ep.map.as_ref())?;
                let (a, student) = student_skill(&theta, &phi, SampleMode::Sample, &mut ep_rng)?;
                let expert = ep.teacher_token(teacher).ok().and_then(|t| skill_lookup(&t).ok());
                let expert = expert.and_then(|s| s.action_index().map(|i| (i, s)));
                let use_teacher = ep_rng.gen::<f64>() < teacher_prob;
                let executed = match expert {
                    Some((star, teacher_skill)) => {
                        supervised += 1;
                        if star == a {
                            agree += 1;
                        } else {
                            dataset.push(round, PreferencePair::new(phi, star, a, reference)?);
                            added += 1;
                        }
                        if use_teacher {
                            teacher_skill
                        } else {
                            student
                        }
                    }
                    None => student,
                };
                ep.apply(&executed)?;
            }
        }
        if supervised == 0 {
            return Err(DistillError::NoSupervision);
        }
        let mut mean_loss = 0.0;
        for _ in 0..config.epochs_per_round {
            mean_loss = dpo_epoch(&mut theta, &dataset, config.beta, config.learning_rate)?;
        }
        log::info!("dagger round {round}: {states} states, {added} new pairs, dataset {}", dataset.len());
        rounds.push(RoundStats {
            round,
            states,
            supervised,
            pairs_added: added,
            dataset_size: dataset.len(),
            agreement: agree as f64 / supervised as f64,
            mean_loss,
        });
    }
    Ok(DaggerOutcome { params: theta, dataset, rounds })
}
