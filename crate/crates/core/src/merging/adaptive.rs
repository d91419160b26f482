use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;

use super::ops::{grad_wrt_weights, merge, MergeMode, MergeWeights, TaskVector};
use crate::corpus::{Catalog, PseudoUserSet};
use crate::error::{Error, Result};
use crate::recmodel::{accumulate_loss_grad, score, Diagnostics, LossParts, LossWeights, ParamSet, Sample, Scoring};
use crate::rng;
use crate::scalar::Scalar;
use crate::training::{AdamConfig, VectorAdam};

/// How pseudo-users are drawn into merging batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Batch slots cycle through the domains, so each contributes equally.
    #[default]
    RoundRobin,
    /// Uniform over the pooled pseudo-users of all domains.
    Proportional,
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round_robin" | "round-robin" => Ok(Sampling::RoundRobin),
            "proportional" => Ok(Sampling::Proportional),
            other => Err(Error::invalid(format!("unknown sampling {other:?} (expected round_robin or proportional)"))),
        }
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::RoundRobin => "round_robin",
            Sampling::Proportional => "proportional",
        })
    }
}

/// What the merging weights are optimized for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective<T> {
    /// Prediction entropy of the merged model.
    Entropy,
    /// Cross-entropy to each teacher's top-1 item plus `lambda` times
    /// `KL(p_merged || p_teacher)`.
    MergeRec { lambda: T },
}

impl<T: Scalar> Objective<T> {
    fn loss_weights(&self) -> LossWeights<T> {
        match *self {
            Objective::Entropy => LossWeights::entropy(),
            Objective::MergeRec { lambda } => LossWeights { ce: T::one(), kd: lambda, entropy: T::zero() },
        }
    }

    fn needs_teachers(&self) -> bool {
        matches!(self, Objective::MergeRec { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig<T> {
    pub steps: usize,
    pub lr: T,
    pub batch_size: usize,
    /// Starting value of every coefficient.
    pub init: T,
    /// Distillation weight; unused by entropy minimization.
    pub lambda: T,
    pub scoring: Scoring<T>,
    pub seed: u64,
    pub sampling: Sampling,
}

impl<T: Scalar> Default for AdaptiveConfig<T> {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: T::lit(1e-3),
            batch_size: 16,
            init: T::lit(0.2),
            lambda: T::lit(1000.0),
            scoring: Scoring::default(),
            seed: 0,
            sampling: Sampling::RoundRobin,
        }
    }
}

/// Everything the merging stage may know about one domain: its item
/// catalog, its pseudo-users and (for distillation) its fine-tuned model.
#[derive(Debug, Clone, Copy)]
pub struct MergeDomain<'a, T> {
    pub catalog: &'a Catalog<T>,
    pub pseudo_users: &'a PseudoUserSet,
    pub teacher: Option<&'a ParamSet<T>>,
    /// Pseudo-user positions available for optimization; all when `None`.
    pub pool: Option<&'a [usize]>,
}

/// Teacher predictions for every pseudo-user of a domain, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherCache<T> {
    pub log_probs: Vec<Vec<T>>,
    /// Top-1 catalog index per pseudo-user (lowest index on ties).
    pub labels: Vec<usize>,
}

pub fn teacher_pass<T: Scalar>(
    teacher: &ParamSet<T>,
    catalog: &Catalog<T>,
    pseudo_users: &PseudoUserSet,
    scoring: &Scoring<T>,
) -> Result<TeacherCache<T>> {
    let mut diag = Diagnostics::default();
    let mut log_probs = Vec::with_capacity(pseudo_users.len());
    let mut labels = Vec::with_capacity(pseudo_users.len());
    for seq in pseudo_users.sequences() {
        let d = score(teacher, seq, catalog, scoring, &mut diag)?;
        labels.push(d.argmax());
        log_probs.push(d.log_probs);
    }
    Ok(TeacherCache { log_probs, labels })
}

/// Loss of one merging step, already reduced over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    pub rec: f64,
    pub kd: f64,
    pub entropy: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome<T> {
    pub params: ParamSet<T>,
    pub weights: MergeWeights<T>,
    /// Coefficients before the first step and after every step (`steps + 1` rows).
    pub weight_trajectory: Vec<Vec<T>>,
    pub loss_trajectory: Vec<StepLoss>,
}

impl<T: Scalar> AdaptiveOutcome<T> {
    pub fn weights_at(&self, step: usize) -> MergeWeights<T> {
        MergeWeights { values: self.weight_trajectory[step].clone(), ..self.weights.clone() }
    }

    /// `step<TAB>name<TAB>value` lines: every coefficient at every step, then
    /// the loss components.
    pub fn trajectory_log(&self, domain_ids: &[String]) -> String {
        let mut out = String::new();
        for (s, row) in self.weight_trajectory.iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                out.push_str(&format!("{s}\t{}\t{:.8}\n", self.weights.label(n, domain_ids), v.as_f64()));
            }
        }
        for l in &self.loss_trajectory {
            for (name, v) in
                [("loss_rec", l.rec), ("loss_kd", l.kd), ("loss_entropy", l.entropy), ("loss_total", l.total)]
            {
                out.push_str(&format!("{}\t{name}\t{v:.8}\n", l.step));
            }
        }
        out
    }
}

struct Prepared<'a, T> {
    domain: MergeDomain<'a, T>,
    teacher: Option<TeacherCache<T>>,
    pool: Vec<usize>,
}

/// A fixed merging problem: base, task vectors and per-domain inputs, with
/// teacher predictions cached. Holds no interaction data.
pub struct AdaptiveProblem<'a, T> {
    base: &'a ParamSet<T>,
    taus: &'a [TaskVector<T>],
    domains: Vec<Prepared<'a, T>>,
    objective: Objective<T>,
    scoring: Scoring<T>,
}

impl<'a, T: Scalar> AdaptiveProblem<'a, T> {
    pub fn new(
        base: &'a ParamSet<T>,
        taus: &'a [TaskVector<T>],
        domains: &[MergeDomain<'a, T>],
        objective: Objective<T>,
        scoring: Scoring<T>,
    ) -> Result<Self> {
        if domains.is_empty() || domains.len() != taus.len() {
            return Err(Error::invalid(format!("{} task vectors but {} merge domains", taus.len(), domains.len())));
        }
        let mut prepared = Vec::with_capacity(domains.len());
        for (k, (d, tau)) in domains.iter().zip(taus).enumerate() {
            base.check_compatible(&tau.delta, &format!("task vector {k}"))?;
            let name = &d.pseudo_users.domain_id;
            if d.catalog.dim() != base.input_dim() {
                return Err(Error::shape(format!(
                    "domain {name}: {}-dimensional features, model expects {}",
                    d.catalog.dim(),
                    base.input_dim()
                )));
            }
            if d.pseudo_users.is_empty() {
                return Err(Error::invalid(format!("domain {name}: empty pseudo-user set")));
            }
            if d.pseudo_users.len() != d.catalog.len() {
                return Err(Error::shape(format!(
                    "domain {name}: {} pseudo-users for a catalog of {}",
                    d.pseudo_users.len(),
                    d.catalog.len()
                )));
            }
            let pool: Vec<usize> = match d.pool {
                Some(p) => p.to_vec(),
                None => (0..d.pseudo_users.len()).collect(),
            };
            if pool.is_empty() || pool.iter().any(|&i| i >= d.pseudo_users.len()) {
                return Err(Error::invalid(format!("domain {name}: pseudo-user pool is empty or out of range")));
            }
            let teacher = match (d.teacher, objective.needs_teachers()) {
                (Some(t), true) => {
                    base.check_compatible(t, &format!("teacher {k}"))?;
                    Some(teacher_pass(t, d.catalog, d.pseudo_users, &scoring)?)
                }
                (None, true) => {
                    return Err(Error::invalid(format!("domain {name}: distillation needs its fine-tuned model")))
                }
                (_, false) => None,
            };
            prepared.push(Prepared { domain: *d, teacher, pool });
        }
        Ok(Self { base, taus, domains: prepared, objective, scoring })
    }

    pub fn teacher(&self, domain: usize) -> Option<&TeacherCache<T>> {
        self.domains[domain].teacher.as_ref()
    }

    /// Loss of the model merged with `w` on `batch` of `(domain, pseudo-user)`
    /// pairs, and its gradient with respect to `w`.
    ///
    /// Each domain's samples are averaged, domain means are summed, and the
    /// distillation weight multiplies the reduced KL term.
    pub fn loss_and_grad(&self, w: &MergeWeights<T>, batch: &[(usize, usize)]) -> Result<(LossParts<T>, T, Vec<T>)> {
        let merged = merge(self.base, self.taus, w)?;
        let mut grad = merged.zeros_like();
        let (parts, total) = self.accumulate(&merged, batch, &mut grad)?;
        Ok((parts, total, grad_wrt_weights(&grad, self.taus, w.mode)?))
    }

    /// The same objective evaluated on an already merged model, without gradients
    /// flowing anywhere but `grad`.
    fn accumulate(
        &self,
        merged: &ParamSet<T>,
        batch: &[(usize, usize)],
        grad: &mut ParamSet<T>,
    ) -> Result<(LossParts<T>, T)> {
        let weights = self.objective.loss_weights();
        let mut parts = LossParts::default();
        let mut diag = Diagnostics::default();
        for (k, d) in self.domains.iter().enumerate() {
            let mine: Vec<usize> = batch.iter().filter(|b| b.0 == k).map(|b| b.1).collect();
            if mine.is_empty() {
                continue;
            }
            let samples: Vec<Sample<'_, T>> = mine
                .iter()
                .map(|&n| Sample {
                    sequence: d.domain.pseudo_users.sequence(n),
                    positive: d.teacher.as_ref().map(|t| t.labels[n]),
                    teacher_log_probs: d.teacher.as_ref().map(|t| t.log_probs[n].as_slice()),
                })
                .collect();
            let scale = T::one() / T::from_usize_lossy(mine.len());
            let p = accumulate_loss_grad(
                merged,
                d.domain.catalog,
                None,
                &samples,
                &weights,
                &self.scoring,
                scale,
                grad,
                &mut diag,
            )?;
            parts.add(&p);
        }
        Ok((parts, parts.total(&weights)))
    }

    /// Adam on the merging coefficients only; base, task vectors and
    /// teachers are read-only throughout.
    pub fn optimize(&self, mode: MergeMode, cfg: &AdaptiveConfig<T>) -> Result<AdaptiveOutcome<T>> {
        if cfg.batch_size == 0 {
            return Err(Error::invalid("merging batch size must be at least 1"));
        }
        let mut w = MergeWeights::uniform(mode, self.taus.len(), self.base.num_layers(), cfg.init);
        let mut adam = VectorAdam::new(w.values.len(), AdamConfig::with_lr(cfg.lr));
        let mut sampler = BatchSampler::new(&self.domains, cfg);
        let mut weight_trajectory = vec![w.values.clone()];
        let mut loss_trajectory = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            let batch = sampler.next_batch(cfg.batch_size);
            let (parts, total, gw) = self.loss_and_grad(&w, &batch)?;
            if !total.is_finite() || !parts.is_finite() {
                return Err(Error::NonFinite(format!("merging loss at step {step}")));
            }
            adam.step(&mut w.values, &gw).map_err(|e| Error::NonFinite(format!("merging step {step}: {e}")))?;
            loss_trajectory.push(StepLoss {
                step,
                rec: parts.ce.as_f64(),
                kd: parts.kd.as_f64(),
                entropy: parts.entropy.as_f64(),
                total: total.as_f64(),
            });
            weight_trajectory.push(w.values.clone());
            if step % 100 == 0 {
                debug!("merge step {step}: loss {:.6}", total.as_f64());
            }
        }
        let mut params = merge(self.base, self.taus, &w)?;
        let method = match self.objective {
            Objective::Entropy => "adamerging",
            Objective::MergeRec { .. } => "mergerec",
        };
        params.meta.notes.insert("method".into(), format!("{method}-{mode}"));
        info!("{method} ({mode}) finished {} steps", cfg.steps);
        Ok(AdaptiveOutcome { params, weights: w, weight_trajectory, loss_trajectory })
    }
}

struct BatchSampler {
    sampling: Sampling,
    seed: u64,
    pools: Vec<Vec<usize>>,
    /// Per-domain shuffled order and cursor (round-robin), or one pooled order.
    orders: Vec<Vec<(usize, usize)>>,
    cursors: Vec<usize>,
    passes: Vec<usize>,
    slot: usize,
}

impl BatchSampler {
    fn new<T>(domains: &[Prepared<'_, T>], cfg: &AdaptiveConfig<T>) -> Self {
        let pools: Vec<Vec<usize>> = domains.iter().map(|d| d.pool.clone()).collect();
        let lanes = match cfg.sampling {
            Sampling::RoundRobin => pools.len(),
            Sampling::Proportional => 1,
        };
        Self {
            sampling: cfg.sampling,
            seed: cfg.seed,
            pools,
            orders: vec![Vec::new(); lanes],
            cursors: vec![0; lanes],
            passes: vec![0; lanes],
            slot: 0,
        }
    }

    fn refill(&mut self, lane: usize) {
        let mut order: Vec<(usize, usize)> = match self.sampling {
            Sampling::RoundRobin => self.pools[lane].iter().map(|&n| (lane, n)).collect(),
            Sampling::Proportional => {
                self.pools.iter().enumerate().flat_map(|(k, p)| p.iter().map(move |&n| (k, n))).collect()
            }
        };
        let tag = format!("merge-order/{lane}/{}", self.passes[lane]);
        order.shuffle(&mut rng::stream(self.seed, &tag));
        self.orders[lane] = order;
        self.cursors[lane] = 0;
        self.passes[lane] += 1;
    }

    fn draw(&mut self, lane: usize) -> (usize, usize) {
        if self.cursors[lane] >= self.orders[lane].len() {
            self.refill(lane);
        }
        let item = self.orders[lane][self.cursors[lane]];
        self.cursors[lane] += 1;
        item
    }

    fn next_batch(&mut self, size: usize) -> Vec<(usize, usize)> {
        (0..size)
            .map(|_| {
                let lane = self.slot % self.orders.len();
                self.slot += 1;
                self.draw(lane)
            })
            .collect()
    }
}

/// Entropy-minimizing coefficient search on pseudo-users.
pub fn adamerging<T: Scalar>(
    base: &ParamSet<T>,
    taus: &[TaskVector<T>],
    domains: &[MergeDomain<'_, T>],
    mode: MergeMode,
    cfg: &AdaptiveConfig<T>,
) -> Result<AdaptiveOutcome<T>> {
    AdaptiveProblem::new(base, taus, domains, Objective::Entropy, cfg.scoring)?.optimize(mode, cfg)
}

/// Pseudo-label recommendation loss plus distillation from each domain's
/// fine-tuned model.
pub fn mergerec<T: Scalar>(
    base: &ParamSet<T>,
    taus: &[TaskVector<T>],
    domains: &[MergeDomain<'_, T>],
    mode: MergeMode,
    cfg: &AdaptiveConfig<T>,
) -> Result<AdaptiveOutcome<T>> {
    let objective = Objective::MergeRec { lambda: cfg.lambda };
    AdaptiveProblem::new(base, taus, domains, objective, cfg.scoring)?.optimize(mode, cfg)
}
