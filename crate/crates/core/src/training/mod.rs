//! Base pre-training, per-domain fine-tuning and the pooled multi-domain
//! baseline, all with next-item cross-entropy and Adam.

mod adam;
mod train;

pub use adam::{adam_step, adam_update, AdamConfig, OptimizerState, VectorAdam};
pub use train::{
    finetune, joint_train, pretrain_base, train_next_item, EpochRecord, NegativeMode, TrainConfig, TrainOutcome,
};
