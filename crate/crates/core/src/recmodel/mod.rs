//! The featurized sequential recommender: one shared encoder maps both pooled
//! user histories and single items to representations, scored by cosine.

pub mod checkpoint;
mod encoder;
mod objective;
mod params;

pub use encoder::{backward, encode, encode_with_tape, item_representations, pool_sequence, user_representation, Tape};
pub use objective::{
    accumulate_loss_grad, ce_loss_and_grad, cosine, entropy_loss_and_grad, kd_loss_and_grad, log_softmax, score,
    score_against, Diagnostics, LossParts, LossWeights, PredictionDistribution, Sample, Scoring,
};
pub use params::{Layer, Metadata, ModelDims, ParamSet, Role};
