//! Residual networks that refine K-means directions (AngleNN) and sizes (SizeNN).

mod features;
pub mod io;
mod model;
mod train;

pub use features::{build_features, canonical_order, features_from_parts, FeatureVector, Features, Frame};
pub use model::{
    evaluate_loss, forward_angle, forward_size, loss_and_gradient, AngleOutput, Arch, Block, Linear,
    ModelKind, ModelWeights, Params, TrainingMeta, TrainingSample, DEFAULT_BLOCKS, DEFAULT_HIDDEN,
};
pub use train::{train, Adam, EpochStats, Hyperparams, TrainOutcome};
