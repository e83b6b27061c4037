//! The meta-imitation learner: networks, objectives, training and
//! adaptation.

mod adapt;
mod alpha;
pub mod losses;
pub mod networks;
mod train;

pub use adapt::{adapt_and_rollout, evaluate_policy, infer_embedding, RolloutReport};
pub use alpha::EntropyTemp;
pub use losses::{bc_loss, discriminator_prob, gan_generator_loss, irl_loss, rl_policy_loss, Embeddings};
pub use networks::{PolicyHead, SoftQ, TaskEncoder, TaskPolicy};
pub use train::{check_demos, rollout_pool, train, train_with, training_rollout, Models, TrainOutput};
pub(crate) use train::{bc_step, choose_tasks, finite, warm_up, Optimizers};
