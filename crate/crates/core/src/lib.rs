//! Desk-scale laboratory for comparing LLM-guided architecture search, random
//! NAS, hyperparameter-only search and a fixed default over a small
//! autoregressive transformer, plus the analysis pipeline that splits the
//! resulting improvement into hyperparameter and architecture parts.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod search;
pub mod stats;
pub mod tensor;
pub mod trainer;

pub use config::{ArchConfig, ConfigMutation, HpConfig, SearchConstraint, TrackConfig};
pub use metrics::{BestSoFarCurve, DecompositionResult};
pub use search::{Condition, RunLog};
pub use trainer::{Budget, ExperimentRecord};
