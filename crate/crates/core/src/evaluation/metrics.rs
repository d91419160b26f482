use crate::corpus::DomainDataset;
use crate::error::{Error, Result};
use crate::recmodel::{cosine, encode, item_representations, pool_sequence, Diagnostics, ParamSet, Scoring};
use crate::scalar::Scalar;

/// Which leave-one-out target to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// History = train prefix, target = validation item.
    Valid,
    /// History = train + validation, target = test item.
    Test,
}

/// 1-based rank of `target` when candidates are sorted by descending score,
/// ties going to the lower catalog index.
pub fn rank_of<T: PartialOrd>(scores: &[T], target: usize) -> usize {
    let t = &scores[target];
    1 + scores.iter().enumerate().filter(|(j, s)| *s > t || (*s == t && *j < target)).count()
}

/// Recall@k and NDCG@k of a list of target ranks (one relevant item each).
pub fn recall_ndcg_from_ranks(ranks: &[usize], k: usize) -> Result<(f64, f64)> {
    if k < 1 {
        return Err(Error::invalid("cutoff k must be at least 1"));
    }
    if ranks.is_empty() {
        return Ok((0.0, 0.0));
    }
    let (mut hits, mut gain) = (0.0, 0.0);
    for &r in ranks {
        if r <= k {
            hits += 1.0;
            gain += 1.0 / ((1 + r) as f64).log2();
        }
    }
    let n = ranks.len() as f64;
    Ok((hits / n, gain / n))
}

/// Rank of every user's target over the full domain catalog.
pub fn target_ranks<T: Scalar>(
    params: &ParamSet<T>,
    dataset: &DomainDataset<T>,
    split: Split,
    scoring: &Scoring<T>,
) -> Result<Vec<usize>> {
    let items = item_representations(params, &dataset.catalog)?;
    let mut diag = Diagnostics::default();
    let mut scores = vec![T::zero(); items.len()];
    dataset
        .users
        .iter()
        .map(|u| {
            let (history, target) = match split {
                Split::Valid => (u.valid_history().to_vec(), u.valid),
                Split::Test => (u.test_history(), u.test),
            };
            let user = encode(params, &pool_sequence(&dataset.catalog, &history, scoring.gamma)?)?;
            for (s, r) in scores.iter_mut().zip(&items) {
                *s = cosine(&user, r, &mut diag);
            }
            Ok(rank_of(&scores, target))
        })
        .collect()
}

/// Recall@k and NDCG@k on the test split.
pub fn recall_ndcg_at_k<T: Scalar>(
    params: &ParamSet<T>,
    dataset: &DomainDataset<T>,
    k: usize,
    scoring: &Scoring<T>,
) -> Result<(f64, f64)> {
    if k < 1 {
        return Err(Error::invalid("cutoff k must be at least 1"));
    }
    recall_ndcg_from_ranks(&target_ranks(params, dataset, Split::Test, scoring)?, k)
}

/// Ranks under a history-independent most-popular-in-train ordering.
pub fn popularity_ranks<T: Scalar>(dataset: &DomainDataset<T>, split: Split) -> Vec<usize> {
    let pop: Vec<usize> = dataset.train_popularity();
    dataset.users.iter().map(|u| rank_of(&pop, if split == Split::Valid { u.valid } else { u.test })).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_ties_by_index() {
        assert_eq!(rank_of(&[0.5, 0.9, 0.5, 0.1], 1), 1);
        assert_eq!(rank_of(&[0.5, 0.9, 0.5, 0.1], 0), 2);
        assert_eq!(rank_of(&[0.5, 0.9, 0.5, 0.1], 2), 3);
        assert_eq!(rank_of(&[0.5, 0.9, 0.5, 0.1], 3), 4);
    }

    #[test]
    fn two_user_example() {
        let (r, n) = recall_ndcg_from_ranks(&[2, 15], 10).unwrap();
        assert_eq!(r, 0.5);
        assert!((n - 0.3155).abs() < 5e-5);
        assert_eq!(recall_ndcg_from_ranks(&[1], 10).unwrap(), (1.0, 1.0));
        assert!(recall_ndcg_from_ranks(&[1], 0).is_err());
    }
}
