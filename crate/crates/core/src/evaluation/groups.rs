use std::fmt;

use super::metrics::{recall_ndcg_from_ranks, target_ranks, Split};
use crate::corpus::DomainDataset;
use crate::error::{Error, Result};
use crate::recmodel::{ParamSet, Scoring};
use crate::scalar::Scalar;

/// Inclusive integer range; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bin {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Bin {
    pub fn contains(&self, v: usize) -> bool {
        v >= self.lo && self.hi.is_none_or(|h| v <= h)
    }
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(h) => write!(f, "{}-{}", self.lo, h),
            None => write!(f, ">{}", self.lo.saturating_sub(1)),
        }
    }
}

/// Train-interaction bins for target items. The lowest bin starts at 0 so
/// that items never seen in training are still assigned.
pub fn default_popularity_bins() -> Vec<Bin> {
    [(0, Some(10)), (11, Some(30)), (31, Some(100)), (101, Some(300)), (301, None)]
        .into_iter()
        .map(|(lo, hi)| Bin { lo, hi })
        .collect()
}

/// Up to `n` contiguous bins with cut points at the empirical quantiles of
/// `values`; tied quantiles collapse, so fewer bins may come back.
pub fn quantile_bins(values: &[usize], n: usize) -> Vec<Bin> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut cuts: Vec<usize> =
        (1..n.max(1)).filter_map(|j| sorted.get(j * sorted.len() / n)).copied().filter(|&c| c > 0).collect();
    cuts.dedup();
    let mut bins = Vec::with_capacity(cuts.len() + 1);
    let mut lo = 0;
    for c in cuts {
        if c > lo {
            bins.push(Bin { lo, hi: Some(c - 1) });
            lo = c;
        }
    }
    bins.push(Bin { lo, hi: None });
    bins
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub bin: Bin,
    pub users: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAnalysis {
    /// Grouped by test-time history length (train + validation items).
    pub by_history_length: Vec<GroupMetrics>,
    /// Grouped by the test item's number of training interactions.
    pub by_popularity: Vec<GroupMetrics>,
}

fn group(ranks: &[usize], keys: &[usize], bins: &[Bin], k: usize, what: &str) -> Result<Vec<GroupMetrics>> {
    let mut members = vec![Vec::new(); bins.len()];
    for (&r, &v) in ranks.iter().zip(keys) {
        // First matching bin wins when bins overlap.
        let b = bins
            .iter()
            .position(|b| b.contains(v))
            .ok_or_else(|| Error::invalid(format!("{what} {v} is not covered by any bin")))?;
        members[b].push(r);
    }
    bins.iter()
        .zip(members)
        .map(|(bin, mine)| {
            let (recall, ndcg) = recall_ndcg_from_ranks(&mine, k)?;
            Ok(GroupMetrics { bin: *bin, users: mine.len(), recall, ndcg })
        })
        .collect()
}

/// Test-split metrics broken down by user history length and target
/// popularity. Empty groups are returned with zero users.
pub fn group_analysis<T: Scalar>(
    params: &ParamSet<T>,
    dataset: &DomainDataset<T>,
    length_bins: &[Bin],
    popularity_bins: &[Bin],
    k: usize,
    scoring: &Scoring<T>,
) -> Result<GroupAnalysis> {
    let ranks = target_ranks(params, dataset, Split::Test, scoring)?;
    let lengths: Vec<usize> = dataset.users.iter().map(|u| u.train.len() + 1).collect();
    let pop = dataset.train_popularity();
    let target_pop: Vec<usize> = dataset.users.iter().map(|u| pop[u.test]).collect();
    Ok(GroupAnalysis {
        by_history_length: group(&ranks, &lengths, length_bins, k, "history length")?,
        by_popularity: group(&ranks, &target_pop, popularity_bins, k, "target popularity")?,
    })
}

/// History-length quantile bins of a dataset's test users.
pub fn history_length_bins<T>(dataset: &DomainDataset<T>, n: usize) -> Vec<Bin> {
    let lengths: Vec<usize> = dataset.users.iter().map(|u| u.train.len() + 1).collect();
    quantile_bins(&lengths, n)
}
