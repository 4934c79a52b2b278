//! Deep Koopman model: encoder, decoder, latent linear maps, the four-term
//! training loss, and the training loop.

mod loss;
mod model;
mod train;

pub use loss::{compute_loss, compute_loss_with, loss_and_grads, LossBreakdown, LossWeights, ModelGrads};
pub use model::{Architecture, Checkpoint, CheckpointMeta, KoopmanModel};
pub use train::{render_loss_log, train, write_loss_log, EpochLog, TrainConfig, TrainOutcome};
