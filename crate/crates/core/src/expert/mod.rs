//! Teacher-only knowledge: the shared dynamic map for navigation and the
//! template / codebook occupancy generator for construction.
//!
//! Nothing in this module is reachable from the student's featurizer; bundles
//! are handed to teacher operations only.

mod codebook;
mod map;
mod occupancy;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use codebook::*;
pub use map::{map_update, observation_reports, DynamicMap, MapReport};
pub use occupancy::{jaccard, render_views, Occupancy, Provenance, Template, TemplateLibrary, Views, BACKGROUND};

use crate::hierarchy::{Intent, TaskSpec};
use crate::seed;
use crate::world::Column;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpertError {
    #[error("column {0} is outside the map")]
    Bounds(Column),
    #[error("template library is empty")]
    EmptyLibrary,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("task has no goal")]
    EmptyTask,
}

impl ExpertError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExpertError::Bounds(_) => "BoundsError",
            ExpertError::EmptyLibrary => "EmptyLibrary",
            ExpertError::Shape(_) => "ShapeError",
            ExpertError::InvalidArgument(_) => "InvalidArgument",
            ExpertError::Parse { .. } => "ParseError",
            ExpertError::EmptyTask => "EmptyTask",
        }
    }
}

/// A generated construction target with its rendered projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub occupancy: Occupancy,
    pub views: Views,
}

impl Blueprint {
    pub fn new(occupancy: Occupancy) -> Self {
        let views = render_views(&occupancy);
        Blueprint { occupancy, views }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Knowledge {
    Map(DynamicMap),
    Blueprint(Blueprint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBundle {
    pub knowledge: Knowledge,
    pub weight: f64,
}

impl KnowledgeBundle {
    pub fn map(&self) -> Option<&DynamicMap> {
        match &self.knowledge {
            Knowledge::Map(m) => Some(m),
            Knowledge::Blueprint(_) => None,
        }
    }

    pub fn blueprint(&self) -> Option<&Blueprint> {
        match &self.knowledge {
            Knowledge::Blueprint(b) => Some(b),
            Knowledge::Map(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpertMode {
    /// Single best template, weight 1.
    TopOne,
    /// The `n` most similar templates with similarity-normalized weights.
    Sample(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub mode: ExpertMode,
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { mode: ExpertMode::TopOne, mutation_rate: DEFAULT_MUTATION_RATE, seed: 0 }
    }
}

/// Template library plus a codebook fitted to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub library: TemplateLibrary,
    pub codebook: Codebook,
}

impl Expert {
    /// Builtin templates with a codebook learned from their patches.
    pub fn builtin(seed: u64) -> Result<Self, ExpertError> {
        let library = TemplateLibrary::builtin().clone();
        let patches = library_patches(&library)?;
        let fit = learn_codebook(&patches, DEFAULT_K, 50, &mut seed::rng_for(seed, "codebook"))?;
        Ok(Expert { library, codebook: fit.codebook })
    }
}

/// Knowledge bundles for a task. Build tasks get generated occupancies, all
/// other tasks a single bundle wrapping the dynamic map. Weights sum to 1.
pub fn expert_augment(
    task: &TaskSpec,
    expert: &Expert,
    map: &DynamicMap,
    config: &GenConfig,
) -> Result<Vec<KnowledgeBundle>, ExpertError> {
    let intent = task.intent().map_err(|_| ExpertError::EmptyTask)?;
    let Intent::Build { tokens, .. } = intent else {
        return Ok(vec![KnowledgeBundle { knowledge: Knowledge::Map(map.clone()), weight: 1.0 }]);
    };
    if expert.library.is_empty() {
        return Err(ExpertError::EmptyLibrary);
    }
    let query: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut rng = seed::rng_for(config.seed, "expert-augment");
    match config.mode {
        ExpertMode::TopOne => {
            let t = expert.library.best_match(&query)?;
            let occ = generate_from_template(t.id, &expert.library, &expert.codebook, config.mutation_rate, &mut rng)?;
            Ok(vec![KnowledgeBundle { knowledge: Knowledge::Blueprint(Blueprint::new(occ)), weight: 1.0 }])
        }
        ExpertMode::Sample(n) => {
            let sims = expert.library.similarities(&query);
            let mut order: Vec<usize> = (0..sims.len()).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            order.truncate(n.max(1));
            let total: f64 = order.iter().map(|&i| sims[i]).sum();
            let mut out = Vec::with_capacity(order.len());
            for &i in &order {
                let occ = generate_from_template(i, &expert.library, &expert.codebook, config.mutation_rate, &mut rng)?;
                let weight = if total > 0.0 { sims[i] / total } else { 1.0 / order.len() as f64 };
                out.push(KnowledgeBundle { knowledge: Knowledge::Blueprint(Blueprint::new(occ)), weight });
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Dims;

    fn build(tokens: &[&str]) -> TaskSpec {
        TaskSpec::object(tokens.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn top_one_bundle_schema() {
        let expert = Expert::builtin(0).unwrap();
        let map = DynamicMap::new(Dims::new(8, 8, 1));
        let cfg = GenConfig { mutation_rate: 0.0, ..GenConfig::default() };
        let b = expert_augment(&build(&["build", "pyramid"]), &expert, &map, &cfg).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].weight, 1.0);
        let bp = b[0].blueprint().unwrap();
        assert_eq!(bp.occupancy.provenance.template, Some(0));
        assert_eq!(bp.occupancy.cells, expert.library.templates()[0].occupancy.cells);
        let e = expert_augment(&build(&["explore"]), &expert, &map, &cfg).unwrap();
        assert_eq!(e.len(), 1);
        assert!(e[0].map().is_some());
    }

    #[test]
    fn empty_library_rejected() {
        let mut expert = Expert::builtin(0).unwrap();
        expert.library = TemplateLibrary::new();
        let map = DynamicMap::new(Dims::new(8, 8, 1));
        let err = expert_augment(&build(&["build", "tower"]), &expert, &map, &GenConfig::default()).unwrap_err();
        assert_eq!(err, ExpertError::EmptyLibrary);
    }
}
