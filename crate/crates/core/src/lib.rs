//! SQUIRL: one-shot meta-imitation by jointly learning a task encoder, a
//! task-conditioned policy and a task-conditioned soft Q-function.
//!
//! The crate is self-contained: a small dense-network substrate, the task
//! families, demonstration storage, the learner, its baselines and exact
//! tabular solvers used to verify it.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod envs;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod squirl;
pub mod verify;

pub use baselines::{run, RunOutput, Trained};
pub use checkpoint::Checkpoint;
pub use config::{Algo, Profile, RunConfig};
pub use data::{DemoSet, ReplayBuffer, Trajectory};
pub use envs::{FamilyKind, TaskFamily, TaskSpec};
pub use error::{Error, Result};
pub use metrics::Metrics;
pub use squirl::{Models, TaskEncoder, TaskPolicy, SoftQ};
