//! Desk-scale two-domain retrieval task with known topical structure, used
//! to exercise the full adaptation pipeline end to end.

mod experiment;
mod world;

pub use experiment::{plant_duplicates, Arm, Experiment, ExperimentConfig, PLANTED};
pub use world::{Domain, World, WorldConfig};
