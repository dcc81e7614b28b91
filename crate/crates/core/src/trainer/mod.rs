//! Training loop, checkpoints and full-utterance enhancement.

mod checkpoint;
mod enhance;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use enhance::{enhance_utterance, enhance_utterance_batched, DEFAULT_WINDOW_BATCH};
pub use train::{
    train, train_with_data, validation_loss, LogRecord, TrainConfig, TrainData, TrainOutcome, Trainer,
    BEST_CHECKPOINT, LAST_CHECKPOINT, TIMINGS_LOG, TRAIN_LOG,
};
