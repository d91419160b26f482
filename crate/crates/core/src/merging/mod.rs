//! Task vectors, training-free merges and pseudo-user driven optimization of
//! merging coefficients.
//!
//! Inputs here are checkpoints, item catalogs and pseudo-users only; no type
//! in this module can carry a user's interaction history.

mod adaptive;
mod ops;

pub use adaptive::{
    adamerging, mergerec, teacher_pass, AdaptiveConfig, AdaptiveOutcome, AdaptiveProblem, MergeDomain, Objective,
    Sampling, StepLoss, TeacherCache,
};
pub use ops::{
    averaging_identity_gap, grad_wrt_weights, merge, merge_domainwise, merge_layerwise, task_arithmetic, task_vector,
    ties_merge, ties_merged_delta, ties_trim, weight_averaging, MergeMode, MergeWeights, TaskVector, TrimScope,
};
