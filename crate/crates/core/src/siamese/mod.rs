//! Siamese embedding networks: CNN architectures, the scaled squared-Euclidean
//! distance head, regression losses and the training loop.

mod loss;
mod model;
mod train;

pub use loss::{LossKind, DHAT_FLOOR};
pub use model::{
    init_scale, predict_distance, ArchKind, ArchitectureSpec, EmbeddingModel, BN_MOMENTUM, EMBEDDING_BN_EPS, HIDDEN,
};
pub use train::{accumulate_gradients, pair_distances, train_step, EpochLog, TrainConfig, Trainer};
