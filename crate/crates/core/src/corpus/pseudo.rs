use rand::seq::SliceRandom;

use super::Catalog;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// One single-item sequence `[i]` per catalog item, in catalog order.
///
/// Built from a catalog alone, so it carries no information about any real
/// user's history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoUserSet {
    pub domain_id: String,
    items: Vec<usize>,
}

pub fn build_pseudo_users<T: Scalar>(domain_id: &str, catalog: &Catalog<T>) -> Result<PseudoUserSet> {
    if catalog.is_empty() {
        return Err(Error::invalid(format!("cannot build pseudo-users for domain {domain_id:?}: empty catalog")));
    }
    Ok(PseudoUserSet { domain_id: domain_id.to_string(), items: (0..catalog.len()).collect() })
}

impl PseudoUserSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The catalog item behind pseudo-user `n`.
    pub fn item(&self, n: usize) -> usize {
        self.items[n]
    }

    /// Pseudo-user `n` as an interaction sequence of length one.
    pub fn sequence(&self, n: usize) -> &[usize] {
        std::slice::from_ref(&self.items[n])
    }

    pub fn sequences(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.items.iter().map(std::slice::from_ref)
    }

    /// Splits pseudo-user positions into `(optimization pool, probe set)`,
    /// putting `round(fraction * len)` shuffled positions in the probe set.
    pub fn holdout(&self, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut pos: Vec<usize> = (0..self.len()).collect();
        pos.shuffle(&mut rng::stream(seed, &format!("holdout/{}", self.domain_id)));
        let n_probe = ((fraction.clamp(0.0, 1.0) * self.len() as f64).round() as usize).min(self.len());
        let mut probe = pos.split_off(self.len() - n_probe);
        pos.sort_unstable();
        probe.sort_unstable();
        (pos, probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(n: usize) -> Catalog<f32> {
        Catalog::hashed((0..n).map(|i| format!("i{i}")).collect(), 16, 2, 0).unwrap()
    }

    #[test]
    fn one_sequence_per_item() {
        let p = build_pseudo_users("d", &catalog(3)).unwrap();
        let seqs: Vec<Vec<usize>> = p.sequences().map(<[usize]>::to_vec).collect();
        assert_eq!(seqs, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(build_pseudo_users("d", &catalog(1)).unwrap().len(), 1);
        assert_eq!(build_pseudo_users("d", &catalog(5327)).unwrap().len(), 5327);
        assert!(build_pseudo_users("d", &catalog(0)).is_err());
    }

    #[test]
    fn bijection_with_catalog() {
        let p = build_pseudo_users("d", &catalog(40)).unwrap();
        let mut seen: Vec<usize> = p
            .sequences()
            .map(|s| {
                assert_eq!(s.len(), 1);
                s[0]
            })
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn holdout_partitions() {
        let p = build_pseudo_users("d", &catalog(50)).unwrap();
        let (pool, probe) = p.holdout(0.2, 9);
        assert_eq!(probe.len(), 10);
        let mut all = [pool, probe].concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(p.holdout(0.2, 9), p.holdout(0.2, 9));
    }
}
