//! The segmentation network, its training loop and inference.

pub mod checkpoint;
pub mod direct;
pub mod infer;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use infer::{predict_mask, predict_mask_with, Pipeline};
pub use loss::{loss, LossKind};
pub use model::{SegModelConfig, SegNet};
pub use optim::Sgd;
pub use train::{train, train_with, EpochRecord, TrainConfig, TrainOptions};
