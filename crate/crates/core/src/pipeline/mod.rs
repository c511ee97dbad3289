//! Training, evaluation and persistence.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod train;

pub use adam::{adam_update, Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{MaskMode, TrainConfig};
pub use data::{synthetic_textures, Dataset};
pub use train::{curve_csv, evaluate, train_loop, CurvePoint, EvalReport, MetricSet, Trainer};
