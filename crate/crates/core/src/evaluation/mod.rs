//! Ranking metrics, reference-normalized reports, grouped breakdowns,
//! merging-dynamics probes and seed-level significance tests.

mod dynamics;
mod groups;
mod metrics;
mod report;
mod stats;

pub use dynamics::{dynamics_log, dynamics_probe, DynamicsPoint, ProbeSet};
pub use groups::{
    default_popularity_bins, group_analysis, history_length_bins, quantile_bins, Bin, GroupAnalysis, GroupMetrics,
};
pub use metrics::{popularity_ranks, rank_of, recall_ndcg_at_k, recall_ndcg_from_ranks, target_ranks, Split};
pub use report::{mean_defined, normalize, Column, MetricReport, ReportRow};
pub use stats::{mean, one_tailed_welch_t, std_dev, variance, WelchResult};
