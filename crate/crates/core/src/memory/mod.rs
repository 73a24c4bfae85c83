//! Describer, key-value plan memory and retrieval-augmented planning.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::jaccard;
use crate::hierarchy::Plan;
use crate::world::{name, Grid2, Observation, AIR, NUM_BLOCKS};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("only successful plans can be stored")]
    RejectedEntry,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl MemoryError {
    pub fn kind(&self) -> &'static str {
        match self {
            MemoryError::RejectedEntry => "RejectedEntry",
            MemoryError::InvalidArgument(_) => "InvalidArgument",
            MemoryError::Parse { .. } => "ParseError",
            MemoryError::Io(_) => "IoError",
        }
    }
}

/// Default retrieval depth.
pub const DEFAULT_K: usize = 3;

/// Region cell size used by the position token.
pub const REGION_CELL: i32 = 8;

/// Quantity bucket for a block count.
pub fn bucket(count: usize) -> &'static str {
    match count {
        0..=2 => "few",
        3..=9 => "some",
        _ => "many",
    }
}

fn count_tokens(counts: &[usize; NUM_BLOCKS], out: &mut BTreeSet<String>) {
    for (b, &n) in counts.iter().enumerate() {
        if n > 0 && b != AIR as usize {
            let nm = name(b as u8);
            out.insert(nm.to_string());
            out.insert(format!("{nm}:{}", bucket(n)));
        }
    }
}

/// Keywords for an observation: block names in the patch, a quantity bucket
/// per name, the biome and the coarse position region.
pub fn describe_observation(obs: &Observation) -> BTreeSet<String> {
    let mut counts = [0usize; NUM_BLOCKS];
    for &b in &obs.s_v {
        counts[b as usize] += 1;
    }
    let mut out = BTreeSet::new();
    count_tokens(&counts, &mut out);
    out.insert(format!("biome:{}", obs.biome.name()));
    out.insert(format!(
        "region:{}_{}",
        obs.position.x.div_euclid(REGION_CELL),
        obs.position.z.div_euclid(REGION_CELL)
    ));
    out
}

/// Keywords for a top-view projection: block names and quantity buckets.
pub fn describe_view(view: &Grid2) -> BTreeSet<String> {
    let mut counts = [0usize; NUM_BLOCKS];
    for &b in &view.cells {
        if (b as usize) < NUM_BLOCKS {
            counts[b as usize] += 1;
        }
    }
    let mut out = BTreeSet::new();
    count_tokens(&counts, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key_tokens: BTreeSet<String>,
    pub key_visual: Option<Grid2>,
    pub plan: Plan,
    pub metrics: BTreeMap<String, f64>,
    pub success: bool,
}

impl MemoryEntry {
    /// Text key plus the described visual key.
    pub fn key(&self) -> BTreeSet<String> {
        let mut k = self.key_tokens.clone();
        if let Some(v) = &self.key_visual {
            k.extend(describe_view(v));
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Query {
    pub q_t: BTreeSet<String>,
    pub q_v: Option<Grid2>,
}

impl Query {
    pub fn text<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        Query { q_t: tokens.into_iter().map(Into::into).collect(), q_v: None }
    }

    pub fn key(&self) -> BTreeSet<String> {
        let mut k = self.q_t.clone();
        if let Some(v) = &self.q_v {
            k.extend(describe_view(v));
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<'a> {
    /// Insertion index.
    pub index: usize,
    pub score: f64,
    pub entry: &'a MemoryEntry,
}

/// Append-only store of successful plans.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Memory {
    entries: Vec<MemoryEntry>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn store(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        if !entry.success {
            return Err(MemoryError::RejectedEntry);
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Top-`k` entries by Jaccard similarity of keys; ties keep insertion order.
    pub fn retrieve_topk(&self, query: &Query, k: usize) -> Result<Vec<Retrieved<'_>>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::InvalidArgument("k must be at least 1".into()));
        }
        let q = query.key();
        let mut scored: Vec<Retrieved> = self
            .entries
            .iter()
            .enumerate()
            .map(|(index, entry)| Retrieved { index, score: jaccard(&q, &entry.key()), entry })
            .collect();
        // Stable sort keeps insertion order among equal scores.
        scored.sort_by(|a, b| b.score.total_cmp(&a.score));
        scored.truncate(k);
        Ok(scored)
    }

    /// One JSON record per line.
    pub fn save(&self, mut out: impl Write) -> Result<(), MemoryError> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| MemoryError::InvalidArgument(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn load(input: impl BufRead) -> Result<Self, MemoryError> {
        let mut m = Memory::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: MemoryEntry =
                serde_json::from_str(&line).map_err(|e| MemoryError::Parse { line: i + 1, msg: e.to_string() })?;
            m.store(e).map_err(|_| MemoryError::Parse { line: i + 1, msg: "unsuccessful entry".into() })?;
        }
        Ok(m)
    }
}

/// Outcome of retrieval-augmented planning.
#[derive(Debug, Clone, PartialEq)]
pub struct RasChoice {
    pub plan: Plan,
    /// Rank (0-based) of the memory entry the plan was conditioned on.
    pub rank: Option<usize>,
    /// Normalized retrieval weights of the candidates.
    pub p_eta: Vec<f64>,
    /// Feasibility scores of the candidates.
    pub p_theta: Vec<f64>,
}

/// Retrieval weights normalized to sum to one (uniform when all are zero).
pub fn normalize(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

/// Plan with the top-`k` memory entries: one candidate per retrieved entry,
/// picked by the largest `p_eta * p_theta` (lowest rank on ties). With an
/// empty memory the planner runs unconditioned.
pub fn ras_plan<E>(
    task_tokens: &BTreeSet<String>,
    memory: &Memory,
    mut planner: impl FnMut(Option<&MemoryEntry>) -> Result<Plan, E>,
    mut feasibility: impl FnMut(&Plan) -> f64,
    k: usize,
) -> Result<RasChoice, E>
where
    E: From<MemoryError>,
{
    let hits = memory.retrieve_topk(&Query { q_t: task_tokens.clone(), q_v: None }, k)?;
    if hits.is_empty() {
        let plan = planner(None)?;
        let score = feasibility(&plan);
        return Ok(RasChoice { plan, rank: None, p_eta: Vec::new(), p_theta: vec![score] });
    }
    let p_eta = normalize(&hits.iter().map(|h| h.score).collect::<Vec<_>>());
    let mut plans = Vec::with_capacity(hits.len());
    let mut p_theta = Vec::with_capacity(hits.len());
    for h in &hits {
        let plan = planner(Some(h.entry))?;
        p_theta.push(feasibility(&plan));
        plans.push(plan);
    }
    let mut best = 0;
    for i in 1..plans.len() {
        if p_eta[i] * p_theta[i] > p_eta[best] * p_theta[best] {
            best = i;
        }
    }
    Ok(RasChoice { plan: plans.swap_remove(best), rank: Some(best), p_eta, p_theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Dims, Pos, Role, WorldState, DIAMOND};

    fn entry(tokens: &[&str], success: bool) -> MemoryEntry {
        MemoryEntry {
            key_tokens: tokens.iter().map(|s| s.to_string()).collect(),
            key_visual: None,
            plan: Plan::default(),
            metrics: BTreeMap::new(),
            success,
        }
    }

    #[test]
    fn describe_patch() {
        let mut w = WorldState::empty(Dims::new(20, 20, 6), 0);
        w.add_agent(0, Pos::new(10, 3, 10), Role::Conductor).unwrap();
        let base = describe_observation(&w.observe(0).unwrap());
        assert_eq!(base.len(), 2);
        assert!(base.contains("region:1_1"));
        w.set(Pos::new(11, 3, 10), DIAMOND);
        let d = describe_observation(&w.observe(0).unwrap());
        assert!(d.contains("diamond") && d.contains("diamond:few"));
    }

    #[test]
    fn store_gating_and_retrieval() {
        let mut m = Memory::new();
        assert!(m.retrieve_topk(&Query::text(["a"]), 3).unwrap().is_empty());
        m.store(entry(&["a", "b"], true)).unwrap();
        m.store(entry(&["collect", "stone:10"], true)).unwrap();
        assert_eq!(m.store(entry(&["x"], false)).unwrap_err().kind(), "RejectedEntry");
        assert_eq!(m.len(), 2);
        let r = m.retrieve_topk(&Query::text(["collect", "stone:10"]), 3).unwrap();
        assert_eq!((r[0].index, r[0].score), (1, 1.0));
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = Memory::load(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ras_falls_back_and_picks_product_max() {
        let empty = Memory::new();
        let tokens: BTreeSet<String> = ["t".to_string()].into();
        let c = ras_plan::<MemoryError>(&tokens, &empty, |_| Ok(Plan::default()), |_| 0.5, 3).unwrap();
        assert_eq!(c.rank, None);
        let mut m = Memory::new();
        m.store(entry(&["t"], true)).unwrap();
        m.store(entry(&["t", "u"], true)).unwrap();
        let mut calls = 0;
        let c = ras_plan::<MemoryError>(
            &tokens,
            &m,
            |e| {
                calls += 1;
                let mut p = Plan::default();
                p.conditions = e.unwrap().key_tokens.clone();
                Ok(p)
            },
            |p| if p.conditions.len() == 2 { 1.0 } else { 0.1 },
            3,
        )
        .unwrap();
        // weights 2/3 and 1/3; products 0.0667 and 0.333
        assert_eq!(c.rank, Some(1));
        assert_eq!(calls, 2);
        assert!((c.p_eta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
