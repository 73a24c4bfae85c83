//! Voxel-world multi-agent simulator and training harness.
//!
//! The crate is organised around the pipeline it simulates:
//!
//! - [`world`]: deterministic voxel environment, stepping and multi-modal observation.
//! - [`hierarchy`]: manager / conductor / actor orchestration (centralized planning,
//!   decentralized execution), plan repair and plan dry-runs.
//! - [`policy`]: featurized softmax student policy and the scripted / rule-based teachers.
//! - [`distill`]: behavior cloning, the preference (DPO) loss and the DAgger loop.
//! - [`expert`]: teacher-only knowledge: dynamic map, codebook quantizer, occupancy generator.
//! - [`memory`]: describer, key-value plan memory and retrieval-augmented planning.
//! - [`tasks`]: the five benchmark tasks and their metrics.

pub mod distill;
pub mod expert;
pub mod hierarchy;
pub mod memory;
pub mod policy;
pub mod seed;
pub mod tasks;
pub mod world;

mod error;

pub use error::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;
