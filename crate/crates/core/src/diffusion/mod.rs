//! Forward noising process, the noise-prediction network and its training.

mod adam;
mod mlp;
mod schedule;
mod train;

pub use adam::Adam;
pub use mlp::{time_embedding, Activation, DenoiserModel, LayerShape};
pub use schedule::{q_sample, NoiseSchedule};
pub use train::{LrSchedule, eval_loss, train, EpochRecord, TrainConfig, TrainLog};
