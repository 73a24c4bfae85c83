use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::world::{block_by_name, BlockId, Grid2, BUILDING_MATERIALS};

/// A task: any combination of an image goal, an audio goal and an object /
/// text goal. At least one must be present.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Top-view pattern to locate.
    pub t_v: Option<Grid2>,
    /// Audio event token to hear.
    pub t_a: Option<String>,
    /// Text tokens, e.g. `["find", "diamond"]`, `["collect", "stone:10"]`,
    /// `["build", "pagoda", "planks"]`, `["explore"]`.
    pub t_o: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoalQuery {
    Image(Grid2),
    Audio(String),
    Object(BlockId),
}

/// What the manager understands a task to ask for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Intent {
    /// Find a single goal (stop at the first observation match).
    Find(GoalQuery),
    /// Keep finding blocks of one type until the budget runs out.
    Search(BlockId),
    Explore,
    Collect(Vec<(BlockId, u32)>),
    Build { tokens: Vec<String>, materials: Vec<BlockId> },
}

fn block_token(tok: &str) -> Result<BlockId, PlanError> {
    block_by_name(tok).map(|b| b.id).ok_or_else(|| PlanError::MalformedTask(format!("unknown block {tok:?}")))
}

impl TaskSpec {
    pub fn image(pattern: Grid2) -> Self {
        TaskSpec { t_v: Some(pattern), ..Self::default() }
    }

    pub fn audio(event: &str) -> Self {
        TaskSpec { t_a: Some(event.to_string()), ..Self::default() }
    }

    pub fn object(tokens: Vec<String>) -> Self {
        TaskSpec { t_o: Some(tokens), ..Self::default() }
    }

    pub fn from_words(text: &str) -> Self {
        Self::object(text.split_whitespace().map(str::to_string).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.t_v.is_none() && self.t_a.is_none() && self.t_o.as_ref().map_or(true, |t| t.is_empty())
    }

    /// Text tokens describing the task (used as memory keys).
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.t_v.is_some() {
            out.push("goal:image".to_string());
        }
        if let Some(a) = &self.t_a {
            out.push(format!("goal:audio:{a}"));
        }
        if let Some(t) = &self.t_o {
            out.extend(t.iter().cloned());
        }
        out
    }

    pub fn intent(&self) -> Result<Intent, PlanError> {
        if self.is_empty() {
            return Err(PlanError::EmptyTask);
        }
        if let Some(v) = &self.t_v {
            return Ok(Intent::Find(GoalQuery::Image(v.clone())));
        }
        if let Some(a) = &self.t_a {
            return Ok(Intent::Find(GoalQuery::Audio(a.clone())));
        }
        let toks = self.t_o.as_deref().unwrap_or_default();
        let rest = &toks[1..];
        match toks[0].as_str() {
            "explore" => Ok(Intent::Explore),
            "find" | "search" => {
                let [name] = rest else {
                    return Err(PlanError::MalformedTask(format!("{} takes one block name", toks[0])));
                };
                let b = block_token(name)?;
                Ok(if toks[0] == "find" { Intent::Find(GoalQuery::Object(b)) } else { Intent::Search(b) })
            }
            "collect" => {
                let mut items = Vec::new();
                for tok in rest {
                    let (name, qty) = tok
                        .split_once(':')
                        .ok_or_else(|| PlanError::MalformedTask(format!("expected block:qty, got {tok:?}")))?;
                    let qty: u32 = qty.parse().map_err(|_| PlanError::MalformedTask(format!("bad quantity in {tok:?}")))?;
                    items.push((block_token(name)?, qty));
                }
                Ok(Intent::Collect(items))
            }
            "build" => {
                if rest.is_empty() {
                    return Err(PlanError::MalformedTask("build needs a structure".into()));
                }
                let materials = rest
                    .iter()
                    .filter_map(|t| block_by_name(t))
                    .map(|b| b.id)
                    .filter(|b| BUILDING_MATERIALS.contains(b))
                    .collect();
                Ok(Intent::Build { tokens: rest.to_vec(), materials })
            }
            single if rest.is_empty() && block_by_name(single).is_some() => {
                Ok(Intent::Find(GoalQuery::Object(block_token(single)?)))
            }
            other => Err(PlanError::MalformedTask(format!("unrecognized task {other:?}"))),
        }
    }
}
