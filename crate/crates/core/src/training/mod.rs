//! Multi-task losses, the ADAM optimizer and the training loop.

mod adam;
mod config;
mod loop_;
mod loss;

pub use adam::{adam_step, Adam, AdamConfig};
pub use config::{Task, TaskSet, TrainConfig};
pub use loop_::{read_loss_csv, train, write_loss_csv, Init, TrainOutput, LOSS_CSV_HEADER};
pub use loss::{loss_cls, loss_rec, loss_seg, total_loss, LossBreakdown, LossWeights};
