use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{featurize_items, Interaction};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomainSpec {
    pub id: String,
    pub users: usize,
    pub items: usize,
    pub mean_len: f64,
    pub latent_dim: usize,
    /// Zipf exponent of the item popularity prior.
    pub zipf: f64,
}

impl SyntheticDomainSpec {
    pub fn new(id: impl Into<String>, users: usize, items: usize, mean_len: f64) -> Self {
        Self { id: id.into(), users, items, mean_len, latent_dim: 8, zipf: 1.0 }
    }
}

/// Ties item factors to the hashed item features, the way item text tells
/// a recommender something about an item it has never seen.
///
/// An item's factor is `P_d x_i` for its feature row `x_i`, with
/// `P_d = sqrt(shared) * P + sqrt(1 - shared) * Q_d`: `P` depends only on
/// `seed` and is common to every corpus generated with it, `Q_d` is private
/// to the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureCoupling {
    pub dim: usize,
    pub active: usize,
    /// Seed of both the feature hashing and the shared projection.
    pub seed: u64,
    /// Fraction of factor variance explained by the shared projection.
    pub shared: f64,
}

/// Latent-factor generator settings shared by all domains.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub domains: Vec<SyntheticDomainSpec>,
    /// Scale of the latent dot product in the next-item logits.
    pub affinity: f64,
    /// Weight of the previous item's factor in the preference vector.
    pub carryover: f64,
    /// Independent Gaussian item factors when `None`.
    pub coupling: Option<FeatureCoupling>,
}

impl SyntheticCorpusSpec {
    pub fn new(domains: Vec<SyntheticDomainSpec>) -> Self {
        Self { domains, affinity: 4.0, carryover: 1.5, coupling: None }
    }
}

/// Generates one interaction list per domain.
///
/// Each domain draws item and user factors; a user's next item is sampled
/// from a softmax over unconsumed items of
/// `affinity * <user + carryover * previous_item, item> + popularity`, where
/// popularity is `-zipf * ln(rank)`. Ids are prefixed with the domain id, so
/// no user or item id is shared between domains.
pub fn synthesize_domains(spec: &SyntheticCorpusSpec, seed: u64) -> Result<Vec<Vec<Interaction>>> {
    let mut ids = HashSet::new();
    for d in &spec.domains {
        if d.users == 0 || d.items == 0 {
            return Err(Error::invalid(format!("synthetic domain {:?} needs at least one user and one item", d.id)));
        }
        if d.latent_dim == 0 || d.mean_len.is_nan() || d.mean_len < 1.0 {
            return Err(Error::invalid(format!(
                "synthetic domain {:?}: latent_dim must be positive and mean_len >= 1",
                d.id
            )));
        }
        if let Some(c) = &spec.coupling {
            if !(0.0..=1.0).contains(&c.shared) {
                return Err(Error::invalid(format!("shared factor fraction must lie in [0, 1], got {}", c.shared)));
            }
            if c.active == 0 || c.active > c.dim {
                return Err(Error::invalid("feature activity must satisfy 0 < active <= dim"));
            }
        }
        if !ids.insert(d.id.as_str()) {
            return Err(Error::invalid(format!("duplicate synthetic domain id {:?}", d.id)));
        }
    }
    spec.domains.iter().map(|d| synthesize_one(spec, d, seed)).collect()
}

fn gaussian_matrix(rows: usize, cols: usize, r: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    (0..rows).map(|_| (0..cols).map(|_| normal.sample(r)).collect()).collect()
}

fn coupled_items(c: &FeatureCoupling, d: &SyntheticDomainSpec, seed: u64, scale: f64) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<String> = (0..d.items).map(|n| format!("{}:i{n}", d.id)).collect();
    let x: Vec<f64> = featurize_items(&ids, c.dim, c.active, c.seed)?;
    let shared = gaussian_matrix(d.latent_dim, c.dim, &mut rng::stream(c.seed, "synth/shared-projection"));
    let own = gaussian_matrix(d.latent_dim, c.dim, &mut rng::stream(seed, &format!("synth/{}/projection", d.id)));
    let (a, b) = (c.shared.sqrt(), (1.0 - c.shared).sqrt());
    let norm = scale / (c.active as f64).sqrt();
    Ok(x.chunks(c.dim)
        .map(|row| {
            (0..d.latent_dim)
                .map(|k| {
                    let p: f64 = row.iter().zip(&shared[k]).map(|(xi, s)| xi * s).sum();
                    let q: f64 = row.iter().zip(&own[k]).map(|(xi, o)| xi * o).sum();
                    norm * (a * p + b * q)
                })
                .collect()
        })
        .collect())
}

fn synthesize_one(spec: &SyntheticCorpusSpec, d: &SyntheticDomainSpec, seed: u64) -> Result<Vec<Interaction>> {
    let mut r = rng::stream(seed, &format!("synth/{}", d.id));
    let scale = 1.0 / (d.latent_dim as f64).sqrt();
    let normal = Normal::new(0.0, scale).expect("valid normal");
    let draw = |n: usize, r: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d.latent_dim).map(|_| normal.sample(r)).collect()).collect()
    };
    let mut items = draw(d.items, &mut r);
    if let Some(c) = &spec.coupling {
        items = coupled_items(c, d, seed, scale)?;
    }
    let users = draw(d.users, &mut r);

    let mut rank: Vec<usize> = (1..=d.items).collect();
    rank.shuffle(&mut r);
    let prior: Vec<f64> = rank.iter().map(|&k| -d.zipf * (k as f64).ln()).collect();

    let extra = (d.mean_len - 5.0).max(0.0);
    let lengths = (extra > 0.0).then(|| Poisson::new(extra).expect("positive rate"));
    let short = (d.mean_len < 5.0).then(|| Poisson::new(d.mean_len).expect("positive rate"));

    let mut out = Vec::new();
    let mut logits = vec![0.0; d.items];
    for (u, z) in users.iter().enumerate() {
        let len = match (&lengths, &short) {
            (_, Some(p)) => (p.sample(&mut r) as usize).max(1),
            (Some(p), None) => 5 + p.sample(&mut r) as usize,
            (None, None) => 5,
        }
        .min(d.items);
        let mut used = vec![false; d.items];
        let mut pref = z.clone();
        for step in 0..len {
            for (i, v) in items.iter().enumerate() {
                logits[i] = if used[i] { f64::NEG_INFINITY } else { spec.affinity * dot(&pref, v) + prior[i] };
            }
            let next = sample_softmax(&logits, &mut r);
            used[next] = true;
            out.push(Interaction::new(format!("{}:u{u}", d.id), format!("{}:i{next}", d.id), 10 * step as i64));
            for (p, (zu, vi)) in pref.iter_mut().zip(z.iter().zip(&items[next])) {
                *p = zu + spec.carryover * vi;
            }
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sample_softmax(logits: &[f64], r: &mut impl Rng) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let mut u = r.random::<f64>() * total;
    let mut last = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        last = i;
        u -= (l - max).exp();
        if u <= 0.0 {
            return i;
        }
    }
    last
}
