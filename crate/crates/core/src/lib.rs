//! Continual reinforcement learning on a non-stationary grid world.
//!
//! The crate trains a small actor-critic agent on an object-picking task
//! whose appearance shifts abruptly between three map variants, and compares
//! five continual-learning strategies (multienv, naive, sup, static, unsup),
//! the last of which gates elastic weight consolidation on an unsupervised
//! reward-moving-average drift signal.

pub mod a2c;
pub mod checkpoint;
pub mod config;
pub mod consolidation;
pub mod drift;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracles;
pub mod plot;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod strategies;

pub use a2c::{Hyperparams, OptimizerState, RolloutBatch, Transition};
pub use config::ExperimentConfig;
pub use consolidation::{Anchor, FisherDiag, PenaltySet};
pub use drift::DetectorState;
pub use env::{Action, EnvState, GridSpec, StepResult};
pub use error::{Error, Result};
pub use eval::RewardMatrix;
pub use nn::{NetworkConfig, ParamVector};
pub use scenario::{MapVariant, ScenarioKind, Schedule};
pub use strategies::{CellConfig, StrategyKind, TrainedRun, Trainer};
