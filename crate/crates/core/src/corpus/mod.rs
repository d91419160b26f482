//! Interaction data: ingestion, synthesis, filtering, splitting and the
//! pseudo-user sets that stand in for real users during merging.

mod features;
mod filter;
mod ingest;
mod pseudo;
mod synth;

use std::collections::HashMap;

pub use features::{featurize_items, format_feature_tsv, read_feature_tsv, write_feature_tsv};
pub use filter::{five_core_filter, k_core_filter, leave_one_out_split};
pub use ingest::{ingest_tsv, parse_tsv};
pub use pseudo::{build_pseudo_users, PseudoUserSet};
pub use synth::{synthesize_domains, FeatureCoupling, SyntheticCorpusSpec, SyntheticDomainSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One raw `(user, item, timestamp)` record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Self { user_id: user_id.into(), item_id: item_id.into(), timestamp }
    }
}

/// Indexed item list of one domain together with a dense feature row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog<T> {
    item_ids: Vec<String>,
    features: Vec<T>,
    dim: usize,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Catalog<T> {
    /// `features` is row-major, one row of length `dim` per item.
    pub fn new(item_ids: Vec<String>, features: Vec<T>, dim: usize) -> Result<Self> {
        if features.len() != item_ids.len() * dim {
            return Err(Error::shape(format!(
                "catalog of {} items needs {} feature values, got {}",
                item_ids.len(),
                item_ids.len() * dim,
                features.len()
            )));
        }
        let mut index = HashMap::with_capacity(item_ids.len());
        for (i, id) in item_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate item id {id:?} in catalog")));
            }
        }
        Ok(Self { item_ids, features, dim, index })
    }

    /// Builds a catalog whose features come from [`featurize_items`].
    pub fn hashed(item_ids: Vec<String>, dim: usize, active: usize, seed: u64) -> Result<Self> {
        let features = featurize_items(&item_ids, dim, active, seed)?;
        Self::new(item_ids, features, dim)
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn item_id(&self, index: usize) -> &str {
        &self.item_ids[index]
    }

    pub fn index_of(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn feature(&self, index: usize) -> &[T] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    /// Restricts the catalog to `indices`, keeping the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let ids = indices.iter().map(|&i| self.item_ids[i].clone()).collect();
        let mut feats = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            feats.extend_from_slice(self.feature(i));
        }
        Self::new(ids, feats, self.dim)
    }
}

/// Leave-one-out split of one user's chronologically ordered sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user_id: String,
    pub train: Vec<usize>,
    pub valid: usize,
    pub test: usize,
}

impl UserSplit {
    /// History visible when predicting the validation item.
    pub fn valid_history(&self) -> &[usize] {
        &self.train
    }

    /// History visible when predicting the test item (train followed by valid).
    pub fn test_history(&self) -> Vec<usize> {
        let mut h = self.train.clone();
        h.push(self.valid);
        h
    }

    /// The full sequence `train ++ [valid] ++ [test]`.
    pub fn sequence(&self) -> Vec<usize> {
        let mut s = self.test_history();
        s.push(self.test);
        s
    }
}

/// One domain `D_k`: its catalog, features and per-user splits.
#[derive(Debug, Clone)]
pub struct DomainDataset<T> {
    pub domain_id: String,
    pub catalog: Catalog<T>,
    pub users: Vec<UserSplit>,
}

/// Groups interactions by user (first-appearance order) and orders each
/// user's items by timestamp, ties kept in input order.
pub fn user_sequences(interactions: &[Interaction]) -> Vec<(String, Vec<&Interaction>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<&str, Vec<&Interaction>> = HashMap::new();
    for it in interactions {
        let entry = groups.entry(it.user_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(it.user_id.clone());
        }
        entry.push(it);
    }
    order
        .into_iter()
        .map(|u| {
            let mut seq = groups.remove(u.as_str()).unwrap_or_default();
            seq.sort_by_key(|it| it.timestamp);
            (u, seq)
        })
        .collect()
}

/// Item ids in order of first appearance.
pub fn item_ids_in_order(interactions: &[Interaction]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    interactions.iter().filter(|it| seen.insert(it.item_id.as_str())).map(|it| it.item_id.clone()).collect()
}

impl<T: Scalar> DomainDataset<T> {
    /// Builds a dataset from (already filtered) interactions and a catalog that
    /// covers every item appearing in them.
    pub fn from_interactions(
        domain_id: impl Into<String>,
        interactions: &[Interaction],
        catalog: Catalog<T>,
    ) -> Result<Self> {
        let mut users = Vec::new();
        for (user_id, seq) in user_sequences(interactions) {
            let items = seq
                .iter()
                .map(|it| {
                    catalog
                        .index_of(&it.item_id)
                        .ok_or_else(|| Error::invalid(format!("item {:?} missing from catalog", it.item_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            users.push(leave_one_out_split(&user_id, &items)?);
        }
        Ok(Self { domain_id: domain_id.into(), catalog, users })
    }

    /// Convenience path: 5-core filter, hashed features, leave-one-out split.
    pub fn prepare(
        domain_id: impl Into<String>,
        raw: &[Interaction],
        feature_dim: usize,
        active: usize,
        feature_seed: u64,
    ) -> Result<Self> {
        let filtered = five_core_filter(raw);
        let catalog = Catalog::hashed(item_ids_in_order(&filtered), feature_dim, active, feature_seed)?;
        Self::from_interactions(domain_id, &filtered, catalog)
    }

    pub fn interaction_count(&self) -> usize {
        self.users.iter().map(|u| u.train.len() + 2).sum()
    }

    /// Number of training-split interactions per catalog item.
    pub fn train_popularity(&self) -> Vec<usize> {
        let mut counts = vec![0; self.catalog.len()];
        for u in &self.users {
            for &i in &u.train {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Keeps the users at the given positions; the catalog is unchanged.
    pub fn with_users(&self, keep: &[usize]) -> Self {
        Self {
            domain_id: self.domain_id.clone(),
            catalog: self.catalog.clone(),
            users: keep.iter().map(|&i| self.users[i].clone()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_keep_input_order() {
        let raw = vec![Interaction::new("u", "b", 5), Interaction::new("u", "a", 5), Interaction::new("u", "c", 1)];
        let seqs = user_sequences(&raw);
        let items: Vec<_> = seqs[0].1.iter().map(|it| it.item_id.as_str()).collect();
        assert_eq!(items, ["c", "b", "a"]);
    }

    #[test]
    fn catalog_rejects_duplicates_and_bad_shapes() {
        assert!(Catalog::<f32>::new(vec!["a".into(), "a".into()], vec![0.0; 4], 2).is_err());
        assert!(Catalog::<f32>::new(vec!["a".into()], vec![0.0; 3], 2).is_err());
    }

    #[test]
    fn split_sequence_round_trips() {
        let cat = Catalog::<f32>::hashed((0..4).map(|i| format!("i{i}")).collect(), 8, 2, 0).unwrap();
        let raw: Vec<_> = (0..4).map(|i| Interaction::new("u", format!("i{i}"), i)).collect();
        let ds = DomainDataset::from_interactions("d", &raw, cat).unwrap();
        assert_eq!(ds.users[0].sequence(), vec![0, 1, 2, 3]);
        assert_eq!(ds.users[0].test_history(), vec![0, 1, 2]);
    }
}
