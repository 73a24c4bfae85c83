//! Decision makers: the linear-softmax student over binary features, the
//! skill table mapping textual actions to world actions, and the scripted /
//! rule-based teachers.

mod features;
mod teacher;

use std::fmt::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{feature_names, featurize, FeatureVector, SCHEMA_ID};
pub use teacher::{build_order, rule_based_teacher_act, scripted_teacher_act, ExpertView, TeacherMode};

use crate::hierarchy::{SubGoal, Target};
use crate::world::{block_by_name, Action, BlockId, Dir, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("unknown skill token {0:?}")]
    UnknownSkill(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("non-finite value in {0}")]
    Numerical(String),
    #[error("{0} requires an expert bundle")]
    MissingExpert(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
}

impl PolicyError {
    pub fn kind(&self) -> &'static str {
        match self {
            PolicyError::UnknownSkill(_) => "UnknownSkill",
            PolicyError::Schema(_) => "SchemaError",
            PolicyError::Numerical(_) => "NumericalError",
            PolicyError::MissingExpert(_) => "MissingExpert",
            PolicyError::Parse { .. } => "ParseError",
            PolicyError::World(e) => e.kind(),
        }
    }
}

/// Which teacher supervises, and whether it may consult the extra expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub mode: TeacherMode,
    pub expert: bool,
}

impl TeacherConfig {
    pub fn scripted_expert() -> Self {
        TeacherConfig { mode: TeacherMode::ScriptedExpert, expert: true }
    }

    pub fn rule_based() -> Self {
        TeacherConfig { mode: TeacherMode::RuleBased, expert: false }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.mode == TeacherMode::ScriptedExpert && !self.expert {
            return Err(PolicyError::MissingExpert("scripted_expert teacher".into()));
        }
        Ok(())
    }
}

/// Identifier of the action vocabulary below.
pub const VOCAB_ID: &str = "skills-v1";

/// The student's action vocabulary, in index order.
pub const ACTIONS: [&str; 16] = [
    "move_north",
    "move_east",
    "move_south",
    "move_west",
    "move_up",
    "move_down",
    "mine_north",
    "mine_east",
    "mine_south",
    "mine_west",
    "place_north",
    "place_east",
    "place_south",
    "place_west",
    "announce",
    "noop",
];

pub const NUM_ACTIONS: usize = ACTIONS.len();

/// Status tokens a teacher emits instead of an action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatusToken {
    Done,
    Unreachable,
    Missing { block: BlockId, qty: u32 },
}

/// Resolved skill: an action constructor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Skill {
    Move(Dir),
    Mine(Dir),
    /// Place toward a direction; the block is chosen by the caller when absent.
    Place(Dir, Option<BlockId>),
    Announce,
    NoOp,
    Status(StatusToken),
}

impl Skill {
    /// Index in [`ACTIONS`]; `None` for status tokens.
    pub fn action_index(&self) -> Option<usize> {
        let h = |d: Dir| Dir::HORIZONTAL.iter().position(|x| *x == d);
        match self {
            Skill::Move(d) => Dir::ALL.iter().position(|x| x == d),
            Skill::Mine(d) => h(*d).map(|i| 6 + i),
            Skill::Place(d, _) => h(*d).map(|i| 10 + i),
            Skill::Announce => Some(14),
            Skill::NoOp => Some(15),
            Skill::Status(_) => None,
        }
    }

    pub fn from_index(i: usize) -> Option<Skill> {
        ACTIONS.get(i).and_then(|t| skill_lookup(t).ok())
    }

    /// Build the world action. `material` supplies the block for a bare place;
    /// without one the place degrades to a no-op.
    pub fn to_action(&self, material: Option<BlockId>, tags: &[String]) -> Action {
        match self {
            Skill::Move(d) => Action::Move(*d),
            Skill::Mine(d) => Action::Mine(*d),
            Skill::Place(d, b) => match b.or(material) {
                Some(b) => Action::Place(*d, b),
                None => Action::NoOp,
            },
            Skill::Announce => Action::Announce(tags.to_vec()),
            Skill::NoOp => Action::NoOp,
            Skill::Status(s) => Action::Announce(vec![status_text(s)]),
        }
    }
}

pub fn status_text(s: &StatusToken) -> String {
    match s {
        StatusToken::Done => "done".into(),
        StatusToken::Unreachable => "unreachable".into(),
        StatusToken::Missing { block, qty } => format!("missing:{}:{qty}", crate::world::name(*block)),
    }
}

fn horizontal(name: &str) -> Option<Dir> {
    Dir::from_name(name).filter(|d| Dir::HORIZONTAL.contains(d))
}

/// Resolve a textual action token.
pub fn skill_lookup(token: &str) -> Result<Skill, PolicyError> {
    let unknown = || PolicyError::UnknownSkill(token.to_string());
    match token {
        "announce" => return Ok(Skill::Announce),
        "noop" => return Ok(Skill::NoOp),
        "done" => return Ok(Skill::Status(StatusToken::Done)),
        "unreachable" => return Ok(Skill::Status(StatusToken::Unreachable)),
        _ => {}
    }
    if let Some(rest) = token.strip_prefix("missing:") {
        let (b, n) = rest.split_once(':').ok_or_else(unknown)?;
        let block = block_by_name(b).ok_or_else(unknown)?.id;
        let qty = n.parse().map_err(|_| unknown())?;
        return Ok(Skill::Status(StatusToken::Missing { block, qty }));
    }
    if let Some(d) = token.strip_prefix("move_") {
        return Dir::from_name(d).map(Skill::Move).ok_or_else(unknown);
    }
    if let Some(d) = token.strip_prefix("mine_") {
        return horizontal(d).map(Skill::Mine).ok_or_else(unknown);
    }
    if let Some(rest) = token.strip_prefix("place_") {
        let (d, b) = match rest.split_once(':') {
            Some((d, b)) => (d, Some(block_by_name(b).filter(|b| b.id != 0).ok_or_else(unknown)?.id)),
            None => (rest, None),
        };
        return horizontal(d).map(|d| Skill::Place(d, b)).ok_or_else(unknown);
    }
    Err(unknown())
}

/// Every token the scripted and rule-based teachers can emit (quantities in
/// `missing:` tokens shown as 1).
pub fn teacher_vocabulary() -> Vec<String> {
    let mut out: Vec<String> = ACTIONS.iter().map(|s| s.to_string()).collect();
    for d in Dir::HORIZONTAL {
        for b in &crate::world::BLOCKS[1..] {
            out.push(format!("place_{}:{}", d.name(), b.name));
        }
    }
    out.push("done".into());
    out.push("unreachable".into());
    for b in &crate::world::BLOCKS[1..] {
        out.push(format!("missing:{}:1", b.name));
    }
    out
}

/// Student parameters: an `actions x dim` weight matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub schema: String,
    pub vocab: String,
    pub actions: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(actions: usize, dim: usize) -> Self {
        PolicyParams {
            schema: SCHEMA_ID.to_string(),
            vocab: VOCAB_ID.to_string(),
            actions,
            dim,
            weights: vec![0.0; actions * dim],
        }
    }

    /// Zero parameters for the builtin schema and vocabulary.
    pub fn standard() -> Self {
        Self::zeros(NUM_ACTIONS, feature_names().len())
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.weights[a * self.dim..(a + 1) * self.dim]
    }

    pub fn get(&self, a: usize, j: usize) -> f64 {
        self.weights[a * self.dim + j]
    }

    pub fn set(&mut self, a: usize, j: usize, v: f64) {
        self.weights[a * self.dim + j] = v;
    }

    pub fn check(&self, phi: &FeatureVector) -> Result<(), PolicyError> {
        if phi.dim != self.dim {
            return Err(PolicyError::Schema(format!("feature dim {} vs params dim {}", phi.dim, self.dim)));
        }
        if self.weights.len() != self.actions * self.dim {
            return Err(PolicyError::Schema("weight matrix has the wrong size".into()));
        }
        Ok(())
    }

    /// Raw logits `W phi`; may contain infinities.
    pub fn logits(&self, phi: &FeatureVector) -> Result<Vec<f64>, PolicyError> {
        self.check(phi)?;
        Ok((0..self.actions)
            .map(|a| {
                let row = self.row(a);
                phi.active.iter().map(|&j| row[j]).sum()
            })
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Text format: `policy <schema> <vocab> <A> <d>` then one row per action.
    pub fn to_text(&self) -> String {
        let mut out = format!("policy {} {} {} {}\n", self.schema, self.vocab, self.actions, self.dim);
        for a in 0..self.actions {
            let row: Vec<String> = self.row(a).iter().map(|w| format!("{w:e}")).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, PolicyError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, msg: &str| PolicyError::Parse { line, msg: msg.to_string() };
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty policy file"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        let ["policy", schema, vocab, a, d] = f[..] else {
            return Err(bad(1, "expected `policy <schema> <vocab> <A> <d>`"));
        };
        let actions: usize = a.parse().map_err(|_| bad(1, "bad A"))?;
        let dim: usize = d.parse().map_err(|_| bad(1, "bad d"))?;
        let mut weights = Vec::with_capacity(actions * dim);
        let mut rows = 0;
        for (i, line) in lines {
            let row = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(i + 1, "bad weight"))?;
            if row.len() != dim {
                return Err(bad(i + 1, "row length differs from d"));
            }
            weights.extend(row);
            rows += 1;
        }
        if rows != actions {
            return Err(bad(1, "row count differs from A"));
        }
        Ok(PolicyParams { schema: schema.to_string(), vocab: vocab.to_string(), actions, dim, weights })
    }
}

/// Block to place for a bare place action: the first bill material carried,
/// else the most plentiful inventory item (lowest id on ties).
pub fn place_material(obs: &Observation, subgoal: &SubGoal) -> Option<BlockId> {
    if let Target::Blueprint { bill, .. } = &subgoal.target {
        if let Some(b) = bill.keys().find(|b| obs.inventory.get(b).copied().unwrap_or(0) > 0) {
            return Some(*b);
        }
    }
    let mut best: Option<(u32, BlockId)> = None;
    for (&b, &n) in &obs.inventory {
        if n > 0 && best.map_or(true, |(m, _)| n > m) {
            best = Some((n, b));
        }
    }
    best.map(|(_, b)| b)
}

/// Log-softmax of the logits, computed with the max-shift trick.
pub fn action_log_probs(params: &PolicyParams, phi: &FeatureVector) -> Result<Vec<f64>, PolicyError> {
    if !params.is_finite() {
        return Err(PolicyError::Numerical("policy weights".into()));
    }
    let logits = params.logits(phi)?;
    let lp = log_softmax(&logits);
    if lp.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::Numerical("log-probabilities".into()));
    }
    Ok(lp)
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleMode {
    Sample,
    /// Highest logit, lowest index on ties.
    Greedy,
}

pub fn sample_action(
    params: &PolicyParams,
    phi: &FeatureVector,
    mode: SampleMode,
    rng: &mut impl Rng,
) -> Result<usize, PolicyError> {
    match mode {
        SampleMode::Greedy => {
            let logits = params.logits(phi)?;
            if logits.iter().any(|l| l.is_nan()) {
                return Err(PolicyError::Numerical("logits".into()));
            }
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        SampleMode::Sample => {
            let lp = action_log_probs(params, phi)?;
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, l) in lp.iter().enumerate() {
                let p = l.exp();
                if p > 0.0 {
                    last = i;
                }
                acc += p;
                if u < acc {
                    return Ok(i);
                }
            }
            Ok(last)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::world::BRICK;

    #[test]
    fn lookup_examples() {
        assert_eq!(skill_lookup("move_east").unwrap(), Skill::Move(Dir::East));
        assert_eq!(skill_lookup("gibberish").unwrap_err().kind(), "UnknownSkill");
        assert_eq!(skill_lookup("place_west:brick").unwrap(), Skill::Place(Dir::West, Some(BRICK)));
        assert!(skill_lookup("mine_up").is_err());
        assert!(skill_lookup("place_north:air").is_err());
        for (i, t) in ACTIONS.iter().enumerate() {
            assert_eq!(skill_lookup(t).unwrap().action_index(), Some(i));
        }
        for t in teacher_vocabulary() {
            assert!(skill_lookup(&t).is_ok(), "{t}");
        }
    }

    #[test]
    fn uniform_at_zero_and_two_action_case() {
        let p = PolicyParams::zeros(4, 3);
        let phi = FeatureVector::new(3, vec![0, 2]);
        for l in action_log_probs(&p, &phi).unwrap() {
            assert!((l + 4f64.ln()).abs() < 1e-15);
        }
        let mut p = PolicyParams::zeros(2, 1);
        p.set(1, 0, 3f64.ln());
        let lp = action_log_probs(&p, &FeatureVector::new(1, vec![0])).unwrap();
        assert!((lp[0].exp() - 0.25).abs() < 1e-15);
        assert!((lp[1].exp() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn greedy_handles_infinite_sentinel() {
        let mut p = PolicyParams::zeros(3, 2);
        p.set(2, 1, f64::INFINITY);
        let phi = FeatureVector::new(2, vec![1]);
        let mut rng = seed::rng(0);
        for _ in 0..10 {
            assert_eq!(sample_action(&p, &phi, SampleMode::Greedy, &mut rng).unwrap(), 2);
        }
        assert_eq!(action_log_probs(&p, &phi).unwrap_err().kind(), "NumericalError");
    }

    #[test]
    fn params_text_round_trip() {
        let mut p = PolicyParams::zeros(3, 4);
        for (i, w) in p.weights.iter_mut().enumerate() {
            *w = (i as f64 * 0.37).sin() * 1e3 / 7.0;
        }
        assert_eq!(PolicyParams::parse(&p.to_text()).unwrap(), p);
        assert!(PolicyParams::parse("policy s v 2 2\n1 2\n").is_err());
    }

    #[test]
    fn dimension_mismatch_is_schema_error() {
        let p = PolicyParams::zeros(2, 3);
        assert_eq!(action_log_probs(&p, &FeatureVector::new(4, vec![])).unwrap_err().kind(), "SchemaError");
    }
}
