//! Merging per-domain fine-tuned sequential recommenders into one model.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases. Checkpoints store
//! `f32`, so pipelines that round-trip through disk use the `F32` aliases.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod merging;
pub mod recmodel;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ParamSetF32 = recmodel::ParamSet<f32>;
pub type ParamSetF64 = recmodel::ParamSet<f64>;
pub type CatalogF32 = corpus::Catalog<f32>;
pub type CatalogF64 = corpus::Catalog<f64>;
pub type DomainDatasetF32 = corpus::DomainDataset<f32>;
pub type DomainDatasetF64 = corpus::DomainDataset<f64>;
pub type TaskVectorF32 = merging::TaskVector<f32>;
pub type TaskVectorF64 = merging::TaskVector<f64>;
pub type MergeWeightsF32 = merging::MergeWeights<f32>;
pub type MergeWeightsF64 = merging::MergeWeights<f64>;
