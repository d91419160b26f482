//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mergelab_core::corpus::{FeatureCoupling, SyntheticCorpusSpec, SyntheticDomainSpec};
use mergelab_core::evaluation::{default_popularity_bins, Bin};
use mergelab_core::merging::{AdaptiveConfig, MergeMode, Sampling, TrimScope};
use mergelab_core::recmodel::{ModelDims, Scoring};
use mergelab_core::training::{NegativeMode, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Where every artifact is written; relative to the config file.
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub merge: MergeSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Tsv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub source: Source,
    /// Generator seed of a synthetic corpus.
    #[serde(default = "default_corpus_seed")]
    pub seed: u64,
    #[serde(default)]
    pub features: FeatureSection,
    /// Synthetic only: share of item-factor variance tied to the features
    /// through a projection common to all corpora. Omit for factors that are
    /// independent of the features.
    #[serde(default)]
    pub shared: Option<f64>,
    #[serde(default = "default_affinity")]
    pub affinity: f64,
    #[serde(default = "default_carryover")]
    pub carryover: f64,
    pub domains: Vec<DomainEntry>,
}

fn default_corpus_seed() -> u64 {
    1
}
fn default_affinity() -> f64 {
    4.0
}
fn default_carryover() -> f64 {
    1.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub dim: usize,
    pub active: usize,
    pub seed: u64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self { dim: 64, active: 8, seed: 7 }
    }
}

/// One domain: generator settings for a synthetic corpus, file paths for a
/// TSV corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainEntry {
    pub id: String,
    #[serde(default)]
    pub users: Option<usize>,
    #[serde(default)]
    pub items: Option<usize>,
    #[serde(default)]
    pub mean_len: Option<f64>,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default)]
    pub zipf: Option<f64>,
    /// Interaction TSV (`user<TAB>item<TAB>timestamp`).
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Optional item feature TSV; hashed features are used otherwise.
    #[serde(default)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    /// Generator seed of a synthetic pre-training corpus.
    #[serde(default = "default_pretrain_seed")]
    pub seed: u64,
    /// Seed of the base model's initialization and batch order.
    #[serde(default)]
    pub train_seed: u64,
    pub domains: Vec<DomainEntry>,
}

fn default_pretrain_seed() -> u64 {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
    /// Recency decay of the history pooling.
    pub gamma: f64,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 32, output: 16, layers: 3, gamma: 0.8, temperature: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `full` (whole catalog) or `in_batch`.
    pub negatives: String,
    /// Cutoff of the validation recall used for early stopping.
    pub eval_k: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { max_epochs: 50, patience: 5, batch_size: 64, lr: 1e-3, negatives: "full".into(), eval_k: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeSection {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub init: f64,
    pub lambda: f64,
    /// `round_robin` or `proportional`.
    pub sampling: String,
    /// Share of each domain's pseudo-users held out of optimization as the
    /// probe set of the dynamics traces.
    pub probe_fraction: f64,
    pub task_arithmetic_weight: f64,
    pub ties_density: f64,
    pub ties_weight: f64,
    /// `global` or `per_layer`.
    pub ties_scope: String,
}

impl Default for MergeSection {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            batch_size: 16,
            init: 0.2,
            lambda: 1000.0,
            sampling: "round_robin".into(),
            probe_fraction: 0.2,
            task_arithmetic_weight: 0.4,
            ties_density: 0.2,
            ties_weight: 1.0,
            ties_scope: "global".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    /// Number of history-length quantile bins per domain.
    pub length_bins: usize,
    /// Lower edges of the target-popularity bins; the last bin is open.
    #[serde(default)]
    pub popularity_edges: Option<Vec<usize>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { k: 10, length_bins: 5, popularity_edges: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Scarcity targets; the last corpus domain when empty.
    pub scarcity_targets: Vec<String>,
    pub scarcity_fractions: Vec<f64>,
    /// Domains kept out of the merge in `unseen`; the last corpus domain
    /// when empty.
    pub unseen_domains: Vec<String>,
    pub lambda_grid: Vec<f64>,
    /// Smallest merged-domain count of the sweep.
    pub sweep_min: usize,
    /// Probe evaluation interval of the dynamics traces, in steps.
    pub dynamics_every: usize,
    pub dynamics_modes: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            scarcity_targets: Vec::new(),
            scarcity_fractions: vec![0.01, 0.05, 0.10],
            unseen_domains: Vec::new(),
            lambda_grid: vec![0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0],
            sweep_min: 2,
            dynamics_every: 10,
            dynamics_modes: vec!["domainwise".into()],
        }
    }
}

/// A parsed, validated config with its identity hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    /// Hex digest of the canonical config, excluding the output directory.
    pub hash: String,
    /// Directory that relative paths are resolved against.
    pub root: PathBuf,
}

impl Loaded {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, root).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_str(text: &str, root: PathBuf) -> CliResult<Self> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        let hash = config.hash()?;
        Ok(Self { config, hash, root })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// The config hash, abbreviated for file headers.
    pub fn short_hash(&self) -> &str {
        &self.hash[..16]
    }
}

pub(crate) fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn canonical<S: Serialize>(value: &S) -> CliResult<String> {
    toml::to_string(value).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    fn hash(&self) -> CliResult<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        Ok(digest(&[&canonical(&c)?]))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(bad("seeds must not be empty"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(bad("seeds must be distinct"));
        }
        let f = &self.corpus.features;
        if f.active == 0 || f.active > f.dim {
            return Err(bad(format!("corpus.features needs 0 < active <= dim, got {}/{}", f.active, f.dim)));
        }
        if let Some(s) = self.corpus.shared {
            if !(0.0..=1.0).contains(&s) {
                return Err(bad(format!("corpus.shared must lie in [0, 1], got {s}")));
            }
        }
        self.check_domains("corpus.domains", &self.corpus.domains)?;
        self.check_domains("pretrain.domains", &self.pretrain.domains)?;
        let ids: Vec<&str> = self.corpus.domains.iter().map(|d| d.id.as_str()).collect();
        for id in self.pretrain.domains.iter().map(|d| d.id.as_str()) {
            if ids.contains(&id) {
                return Err(bad(format!("domain {id:?} is both a pre-training and an experiment domain")));
            }
        }
        self.dims().shapes().map_err(|e| bad(e.to_string()))?;
        self.train_config(0).validate().map_err(|e| bad(e.to_string()))?;
        self.mode_list()?;
        self.adaptive(0)?;
        self.ties_scope()?;
        let m = &self.merge;
        if !(0.0..1.0).contains(&m.probe_fraction) {
            return Err(bad(format!("merge.probe_fraction must lie in [0, 1), got {}", m.probe_fraction)));
        }
        if !(m.ties_density > 0.0 && m.ties_density <= 1.0) {
            return Err(bad(format!("merge.ties_density must lie in (0, 1], got {}", m.ties_density)));
        }
        if self.eval.k == 0 || self.eval.length_bins == 0 {
            return Err(bad("eval.k and eval.length_bins must be positive"));
        }
        if let Some(edges) = &self.eval.popularity_edges {
            if edges.first() != Some(&0) || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("eval.popularity_edges must start at 0 and increase strictly"));
            }
        }
        let x = &self.experiment;
        for id in x.scarcity_targets.iter().chain(&x.unseen_domains) {
            if !ids.contains(&id.as_str()) {
                return Err(bad(format!("experiment names unknown domain {id:?}")));
            }
        }
        if x.scarcity_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(bad("experiment.scarcity_fractions must lie in (0, 1]"));
        }
        if x.dynamics_every == 0 {
            return Err(bad("experiment.dynamics_every must be positive"));
        }
        if x.sweep_min == 0 {
            return Err(bad("experiment.sweep_min must be positive"));
        }
        Ok(())
    }

    fn check_domains(&self, what: &str, domains: &[DomainEntry]) -> CliResult<()> {
        if domains.is_empty() {
            return Err(bad(format!("{what} must not be empty")));
        }
        for (n, d) in domains.iter().enumerate() {
            if d.id.is_empty() || d.id.chars().any(|c| c.is_whitespace() || c == '/' || c == '\\') {
                return Err(bad(format!("{what}: domain id {:?} must be a non-empty token without slashes", d.id)));
            }
            if domains[..n].iter().any(|o| o.id == d.id) {
                return Err(bad(format!("{what}: duplicate domain id {:?}", d.id)));
            }
            match self.corpus.source {
                Source::Synthetic => {
                    if d.users.is_none() || d.items.is_none() {
                        return Err(bad(format!("{what}: synthetic domain {:?} needs users and items", d.id)));
                    }
                    if d.path.is_some() || d.features.is_some() {
                        return Err(bad(format!("{what}: synthetic domain {:?} takes no file paths", d.id)));
                    }
                }
                Source::Tsv => {
                    if d.path.is_none() {
                        return Err(bad(format!("{what}: TSV domain {:?} needs a path", d.id)));
                    }
                    if d.users.is_some()
                        || d.items.is_some()
                        || d.mean_len.is_some()
                        || d.latent_dim.is_some()
                        || d.zipf.is_some()
                    {
                        return Err(bad(format!("{what}: TSV domain {:?} takes no generator settings", d.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn domain_ids(&self) -> Vec<String> {
        self.corpus.domains.iter().map(|d| d.id.clone()).collect()
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.corpus.features.dim,
            hidden: self.model.hidden,
            output: self.model.output,
            layers: self.model.layers,
        }
    }

    pub fn scoring(&self) -> Scoring<f32> {
        Scoring { gamma: self.model.gamma as f32, temperature: self.model.temperature as f32 }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig<f32> {
        let t = &self.train;
        TrainConfig {
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            lr: t.lr as f32,
            seed,
            negatives: t.negatives.parse().unwrap_or(NegativeMode::Full),
            scoring: self.scoring(),
            eval_k: t.eval_k,
        }
    }

    pub fn negatives(&self) -> CliResult<NegativeMode> {
        self.train.negatives.parse().map_err(|e: mergelab_core::Error| bad(format!("train.negatives: {e}")))
    }

    pub fn adaptive(&self, seed: u64) -> CliResult<AdaptiveConfig<f32>> {
        self.negatives()?;
        let m = &self.merge;
        let sampling: Sampling =
            m.sampling.parse().map_err(|e: mergelab_core::Error| bad(format!("merge.sampling: {e}")))?;
        if m.batch_size == 0 || m.lr.is_nan() || m.lr <= 0.0 || !m.lambda.is_finite() || m.lambda < 0.0 {
            return Err(bad("merge needs batch_size > 0, lr > 0 and a finite lambda >= 0"));
        }
        Ok(AdaptiveConfig {
            steps: m.steps,
            lr: m.lr as f32,
            batch_size: m.batch_size,
            init: m.init as f32,
            lambda: m.lambda as f32,
            scoring: self.scoring(),
            seed,
            sampling,
        })
    }

    pub fn ties_scope(&self) -> CliResult<TrimScope> {
        parse_scope(&self.merge.ties_scope)
    }

    pub fn mode_list(&self) -> CliResult<Vec<MergeMode>> {
        self.experiment
            .dynamics_modes
            .iter()
            .map(|m| m.parse().map_err(|e: mergelab_core::Error| bad(format!("experiment.dynamics_modes: {e}"))))
            .collect()
    }

    pub fn popularity_bins(&self) -> Vec<Bin> {
        match &self.eval.popularity_edges {
            None => default_popularity_bins(),
            Some(edges) => edges
                .iter()
                .enumerate()
                .map(|(n, &lo)| Bin { lo, hi: edges.get(n + 1).map(|&next| next - 1) })
                .collect(),
        }
    }

    /// Generator spec for a synthetic domain list.
    pub fn synthetic_spec(&self, domains: &[DomainEntry]) -> SyntheticCorpusSpec {
        let c = &self.corpus;
        let specs = domains
            .iter()
            .map(|d| {
                let mut s = SyntheticDomainSpec::new(
                    d.id.clone(),
                    d.users.unwrap_or(0),
                    d.items.unwrap_or(0),
                    d.mean_len.unwrap_or(10.0),
                );
                if let Some(l) = d.latent_dim {
                    s.latent_dim = l;
                }
                if let Some(z) = d.zipf {
                    s.zipf = z;
                }
                s
            })
            .collect();
        SyntheticCorpusSpec {
            affinity: c.affinity,
            carryover: c.carryover,
            coupling: c.shared.map(|shared| FeatureCoupling {
                dim: c.features.dim,
                active: c.features.active,
                seed: c.features.seed,
                shared,
            }),
            ..SyntheticCorpusSpec::new(specs)
        }
    }
}

pub fn parse_scope(s: &str) -> CliResult<TrimScope> {
    match s {
        "global" => Ok(TrimScope::Global),
        "per_layer" | "per-layer" => Ok(TrimScope::PerLayer),
        other => Err(bad(format!("unknown TIES scope {other:?} (expected global or per_layer)"))),
    }
}
