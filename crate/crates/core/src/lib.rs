//! Toy laboratory for KL-regularized policy optimization over a finite
//! answer space.

pub mod config;
pub mod dist;
pub mod error;
pub mod harness;
pub mod mara;
pub mod scenario;
pub mod targets;
pub mod trainer;

pub use dist::{entropy, kl, log_sum_exp, normalize, sample, seeded_rng, tv_distance, Categorical, RewardVector, Sampler};
pub use error::{Error, FlipFailure, Result};
pub use scenario::{resolve_scenario, scenario_by_name, Scenario};
pub use targets::{TargetKind, TargetSpec};
