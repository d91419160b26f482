use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig, OptimizerState};
use crate::corpus::DomainDataset;
use crate::error::{Error, Result};
use crate::evaluation::{recall_ndcg_from_ranks, target_ranks, Split};
use crate::recmodel::{
    accumulate_loss_grad, Diagnostics, LossParts, LossWeights, Metadata, ModelDims, ParamSet, Role, Sample, Scoring,
};
use crate::rng;
use crate::scalar::Scalar;

/// Candidate set for the next-item softmax during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeMode {
    /// Every item of the example's domain catalog.
    #[default]
    Full,
    /// The distinct positives of the same-domain examples in the batch.
    InBatch,
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::Full => "full",
            NegativeMode::InBatch => "in_batch",
        })
    }
}

impl FromStr for NegativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(NegativeMode::Full),
            "in_batch" | "in-batch" => Ok(NegativeMode::InBatch),
            other => Err(Error::invalid(format!("unknown negative mode {other:?} (expected full or in_batch)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig<T> {
    /// Upper bound on epochs; 0 returns the starting parameters unchanged.
    pub max_epochs: usize,
    /// Epochs without a strict improvement of validation recall before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub lr: T,
    pub seed: u64,
    pub negatives: NegativeMode,
    pub scoring: Scoring<T>,
    /// Cutoff of the validation recall used for early stopping.
    pub eval_k: usize,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            patience: 5,
            batch_size: 64,
            lr: T::lit(1e-3),
            seed: 0,
            negatives: NegativeMode::Full,
            scoring: Scoring::default(),
            eval_k: 10,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_k == 0 {
            return Err(Error::invalid("batch size and eval cutoff must be positive"));
        }
        if self.lr <= T::zero() || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.scoring.temperature.is_nan() || self.scoring.temperature <= T::zero() {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub metric: String,
    pub value: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{:.6}", self.epoch, self.split, self.metric, self.value)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters at the best validation epoch (epoch 0 is the starting point).
    pub params: ParamSet<T>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Mean per-batch training loss of every epoch run.
    pub epoch_losses: Vec<f64>,
    pub records: Vec<EpochRecord>,
}

impl<T> TrainOutcome<T> {
    /// `epoch<TAB>split<TAB>metric<TAB>value` lines.
    pub fn log(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// `(dataset, user, prefix length)`: predict `train[len]` from `train[..len]`.
type Pair = (usize, usize, usize);

/// Every prefix -> next-item pair inside the training splits.
fn training_pairs<T>(datasets: &[&DomainDataset<T>]) -> Vec<Pair> {
    let mut pairs = Vec::new();
    for (d, ds) in datasets.iter().enumerate() {
        for (u, split) in ds.users.iter().enumerate() {
            for len in 1..split.train.len() {
                pairs.push((d, u, len));
            }
        }
    }
    pairs
}

fn mean_valid_metrics<T: Scalar>(
    params: &ParamSet<T>,
    datasets: &[&DomainDataset<T>],
    cfg: &TrainConfig<T>,
) -> Result<(f64, f64)> {
    let (mut r, mut n) = (0.0, 0.0);
    for ds in datasets {
        let ranks = target_ranks(params, ds, Split::Valid, &cfg.scoring)?;
        let (ri, ni) = recall_ndcg_from_ranks(&ranks, cfg.eval_k)?;
        r += ri;
        n += ni;
    }
    let k = datasets.len() as f64;
    Ok((r / k, n / k))
}

fn run_batch<T: Scalar>(
    params: &ParamSet<T>,
    datasets: &[&DomainDataset<T>],
    batch: &[Pair],
    cfg: &TrainConfig<T>,
    grad: &mut ParamSet<T>,
    diag: &mut Diagnostics,
) -> Result<LossParts<T>> {
    let scale = T::one() / T::from_usize_lossy(batch.len());
    let mut total = LossParts::default();
    for (d, ds) in datasets.iter().enumerate() {
        let mine: Vec<&Pair> = batch.iter().filter(|p| p.0 == d).collect();
        if mine.is_empty() {
            continue;
        }
        let targets: Vec<usize> = mine.iter().map(|&&(_, u, len)| ds.users[u].train[len]).collect();
        let candidates: Option<Vec<usize>> = match cfg.negatives {
            NegativeMode::Full => None,
            NegativeMode::InBatch => {
                let mut c = targets.clone();
                c.sort_unstable();
                c.dedup();
                Some(c)
            }
        };
        let samples: Vec<Sample<'_, T>> = mine
            .iter()
            .zip(&targets)
            .map(|(&&(_, u, len), &t)| {
                let pos = match &candidates {
                    None => t,
                    Some(c) => c.binary_search(&t).expect("target is a candidate"),
                };
                Sample::with_positive(&ds.users[u].train[..len], pos)
            })
            .collect();
        let parts = accumulate_loss_grad(
            params,
            &ds.catalog,
            candidates.as_deref(),
            &samples,
            &LossWeights::ce(),
            &cfg.scoring,
            scale,
            grad,
            diag,
        )?;
        total.add(&parts);
    }
    Ok(total)
}

/// Next-item CE training over the union of `datasets`, starting from `init`,
/// with early stopping on the mean validation recall.
pub fn train_next_item<T: Scalar>(
    init: ParamSet<T>,
    datasets: &[&DomainDataset<T>],
    cfg: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(Error::invalid("training needs at least one dataset"));
    }
    for ds in datasets {
        if ds.catalog.dim() != init.input_dim() {
            return Err(Error::shape(format!(
                "domain {} has {}-dimensional features, model expects {}",
                ds.domain_id,
                ds.catalog.dim(),
                init.input_dim()
            )));
        }
    }
    let mut records = Vec::new();
    let push = |records: &mut Vec<EpochRecord>, epoch, split, metric: String, value| {
        records.push(EpochRecord { epoch, split, metric, value })
    };
    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome { params: init, best_epoch: 0, epochs_run: 0, epoch_losses: Vec::new(), records });
    }

    let mut pairs = training_pairs(datasets);
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs: every train split has a single item"));
    }
    let k = cfg.eval_k;
    let (r0, n0) = mean_valid_metrics(&init, datasets, cfg)?;
    push(&mut records, 0, "valid", format!("recall@{k}"), r0);
    push(&mut records, 0, "valid", format!("ndcg@{k}"), n0);

    let mut params = init.clone();
    let mut best = init;
    let (mut best_recall, mut best_epoch, mut stale) = (r0, 0, 0);
    let mut state = OptimizerState::new(&params, AdamConfig::with_lr(cfg.lr));
    let mut grad = params.zeros_like();
    let mut diag = Diagnostics::default();
    let mut epoch_losses = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        pairs.sort_unstable();
        pairs.shuffle(&mut rng::stream(cfg.seed, &format!("train-epoch-{epoch}")));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in pairs.chunks(cfg.batch_size) {
            grad.values_mut().for_each(|g| *g = T::zero());
            let parts = run_batch(&params, datasets, batch, cfg, &mut grad, &mut diag)?;
            if !parts.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {batches}")));
            }
            adam_step(&mut params, &grad, &mut state)?;
            loss_sum += parts.ce.as_f64();
            batches += 1;
        }
        epochs_run = epoch;
        let mean_loss = loss_sum / batches as f64;
        epoch_losses.push(mean_loss);
        let (r, n) = mean_valid_metrics(&params, datasets, cfg)?;
        push(&mut records, epoch, "train", "loss".into(), mean_loss);
        push(&mut records, epoch, "valid", format!("recall@{k}"), r);
        push(&mut records, epoch, "valid", format!("ndcg@{k}"), n);
        debug!("epoch {epoch}: loss {mean_loss:.5} valid recall@{k} {r:.4}");
        if r > best_recall {
            best_recall = r;
            best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if diag.zero_norm_pairs > 0 {
        debug!("{} zero-norm cosine pairs scored as 0 during training", diag.zero_norm_pairs);
    }
    info!("trained {epochs_run} epoch(s); best valid recall@{k} {best_recall:.4} at epoch {best_epoch}");
    Ok(TrainOutcome { params: best, best_epoch, epochs_run, epoch_losses, records })
}

/// Trains the shared base encoder from a seeded random initialization on a
/// corpus disjoint from the experiment domains.
pub fn pretrain_base<T: Scalar>(
    corpus: &[DomainDataset<T>],
    dims: &ModelDims,
    cfg: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    if corpus.is_empty() {
        return Err(Error::invalid("pre-training corpus is empty"));
    }
    let init = ParamSet::random(dims, rng::derive_seed(cfg.seed, "base-init"))?.with_meta(Metadata::new(
        Role::Base,
        None,
        cfg.seed,
    ));
    let refs: Vec<&DomainDataset<T>> = corpus.iter().collect();
    train_next_item(init, &refs, cfg)
}

/// Adapts `base` to one domain's training split.
pub fn finetune<T: Scalar>(
    base: &ParamSet<T>,
    domain: &DomainDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    let init = base.clone().with_meta(Metadata::new(Role::Finetuned, Some(domain.domain_id.clone()), cfg.seed));
    train_next_item(init, &[domain], cfg)
}

/// Multi-domain baseline trained on the pooled interaction data of all
/// domains, starting from `base`.
pub fn joint_train<T: Scalar>(
    base: &ParamSet<T>,
    domains: &[&DomainDataset<T>],
    cfg: &TrainConfig<T>,
) -> Result<TrainOutcome<T>> {
    let mut meta = Metadata::new(Role::Finetuned, None, cfg.seed);
    meta.notes.insert("method".into(), "joint".into());
    train_next_item(base.clone().with_meta(meta), domains, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_domains, SyntheticCorpusSpec, SyntheticDomainSpec};

    fn dataset(id: &str, users: usize, items: usize, seed: u64) -> DomainDataset<f32> {
        let spec = SyntheticCorpusSpec::new(vec![SyntheticDomainSpec::new(id, users, items, 10.0)]);
        let raw = synthesize_domains(&spec, seed).unwrap();
        DomainDataset::prepare(id, &raw[0], 32, 6, seed).unwrap()
    }

    fn small_dims() -> ModelDims {
        ModelDims { input: 32, hidden: 16, output: 8, layers: 3 }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let ds = dataset("a", 60, 30, 1);
        let cfg = TrainConfig { max_epochs: 0, ..TrainConfig::default() };
        let base = pretrain_base(std::slice::from_ref(&ds), &small_dims(), &cfg).unwrap().params;
        let init = ParamSet::<f32>::random(&small_dims(), rng::derive_seed(0, "base-init")).unwrap();
        assert_eq!(base.layers, init.layers);
        let ft = finetune(&base, &ds, &cfg).unwrap().params;
        assert_eq!(ft.layers, base.layers);
        assert_eq!(ft.meta.role, Role::Finetuned);
    }

    #[test]
    fn pairs_stay_inside_train_split() {
        let ds = dataset("a", 40, 30, 2);
        let pairs = training_pairs(&[&ds]);
        let expected: usize = ds.users.iter().map(|u| u.train.len() - 1).sum();
        assert_eq!(pairs.len(), expected);
        assert!(pairs.iter().all(|&(_, u, len)| len >= 1 && len < ds.users[u].train.len()));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let ds = dataset("a", 80, 40, 3);
        let cfg =
            TrainConfig { max_epochs: 4, patience: 10, batch_size: 32, lr: 3e-3, seed: 9, ..TrainConfig::default() };
        let a = pretrain_base(std::slice::from_ref(&ds), &small_dims(), &cfg).unwrap();
        let b = pretrain_base(std::slice::from_ref(&ds), &small_dims(), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.records, b.records);
        assert_eq!(a.epochs_run, 4);
        assert!(a.epoch_losses.last().unwrap() < a.epoch_losses.first().unwrap());
        assert_eq!(a.log().lines().count(), 2 + 3 * 4);
        assert!(a.log().starts_with("0\tvalid\trecall@10\t"));
    }

    #[test]
    fn in_batch_negatives_train() {
        let ds = dataset("a", 60, 30, 4);
        let cfg =
            TrainConfig { max_epochs: 2, patience: 10, negatives: NegativeMode::InBatch, ..TrainConfig::default() };
        let out = pretrain_base(std::slice::from_ref(&ds), &small_dims(), &cfg).unwrap();
        assert_eq!(out.epoch_losses.len(), 2);
        assert!(out.epoch_losses.iter().all(|l| l.is_finite() && *l > 0.0));
        assert_eq!("in_batch".parse::<NegativeMode>().unwrap(), NegativeMode::InBatch);
        assert!("sampled".parse::<NegativeMode>().is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = dataset("a", 40, 30, 5);
        let cfg = TrainConfig::<f32>::default();
        assert!(pretrain_base::<f32>(&[], &small_dims(), &cfg).is_err());
        let wide = ParamSet::<f32>::random(&ModelDims { input: 16, ..small_dims() }, 0).unwrap();
        assert!(matches!(finetune(&wide, &ds, &cfg), Err(Error::ShapeMismatch(_))));
        let bad = TrainConfig { batch_size: 0, ..cfg };
        assert!(finetune(&wide, &ds, &bad).is_err());
    }
}
