//! Merging methods as the CLI exposes them. Inputs are checkpoints and
//! catalogs only.

use std::fmt;

use mergelab_core::corpus::{build_pseudo_users, Catalog, PseudoUserSet};
use mergelab_core::evaluation::ProbeSet;
use mergelab_core::merging::{
    adamerging, mergerec, task_arithmetic, task_vector, teacher_pass, ties_merge, weight_averaging, AdaptiveConfig,
    AdaptiveOutcome, MergeDomain, MergeMode, TaskVector, TrimScope,
};
use mergelab_core::recmodel::{ParamSet, Scoring};

use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Average,
    TaskArithmetic,
    Ties,
    AdaMerging(MergeMode),
    MergeRec(MergeMode),
}

impl Method {
    /// `mode` applies to the adaptive methods and defaults to domain-wise.
    pub fn parse(method: &str, mode: Option<&str>) -> CliResult<Self> {
        let mode = || -> CliResult<MergeMode> {
            mode.map_or(Ok(MergeMode::DomainWise), |m| {
                m.parse().map_err(|e: mergelab_core::Error| CliError::Config(e.to_string()))
            })
        };
        Ok(match method.replace('-', "_").as_str() {
            "average" | "weight_averaging" => Method::Average,
            "task_arithmetic" => Method::TaskArithmetic,
            "ties" => Method::Ties,
            "adamerging" => Method::AdaMerging(mode()?),
            "mergerec" => Method::MergeRec(mode()?),
            other => {
                return Err(CliError::Config(format!(
                    "unknown merge method {other:?} (expected average, task_arithmetic, ties, adamerging or mergerec)"
                )))
            }
        })
    }

    pub fn mode(&self) -> Option<MergeMode> {
        match *self {
            Method::AdaMerging(m) | Method::MergeRec(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Average => f.write_str("average"),
            Method::TaskArithmetic => f.write_str("task-arithmetic"),
            Method::Ties => f.write_str("ties"),
            Method::AdaMerging(m) => write!(f, "adamerging-{m}"),
            Method::MergeRec(m) => write!(f, "mergerec-{m}"),
        }
    }
}

/// Hyperparameters of every method.
#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub task_arithmetic_weight: f32,
    pub ties_density: f64,
    pub ties_weight: f32,
    pub ties_scope: TrimScope,
    pub adaptive: AdaptiveConfig<f32>,
    pub probe_fraction: f64,
}

impl Settings {
    pub fn from_config(cfg: &Config, seed: u64) -> CliResult<Self> {
        let m = &cfg.merge;
        Ok(Self {
            task_arithmetic_weight: m.task_arithmetic_weight as f32,
            ties_density: m.ties_density,
            ties_weight: m.ties_weight as f32,
            ties_scope: cfg.ties_scope()?,
            adaptive: cfg.adaptive(seed)?,
            probe_fraction: m.probe_fraction,
        })
    }
}

/// One merged domain: its fine-tuned checkpoint and item catalog.
#[derive(Debug, Clone, Copy)]
pub struct MergeInput<'a> {
    pub domain_id: &'a str,
    pub catalog: &'a Catalog<f32>,
    pub model: &'a ParamSet<f32>,
}

pub struct Merged {
    pub params: ParamSet<f32>,
    pub adaptive: Option<AdaptiveOutcome<f32>>,
}

/// A domain's pseudo-users split into the optimization pool and the probe
/// set.
pub struct PseudoData {
    pub users: PseudoUserSet,
    pub pool: Vec<usize>,
    pub probe: Vec<usize>,
}

pub fn pseudo_data(domain_id: &str, catalog: &Catalog<f32>, probe_fraction: f64, seed: u64) -> CliResult<PseudoData> {
    let users = build_pseudo_users(domain_id, catalog)?;
    let (pool, probe) = users.holdout(probe_fraction, seed);
    if pool.is_empty() {
        return Err(CliError::Config(format!(
            "domain {domain_id:?}: probe fraction {probe_fraction} leaves no pseudo-users to optimize on"
        )));
    }
    Ok(PseudoData { users, pool, probe })
}

/// Rejects inputs whose layer shapes differ from the base, listing them.
pub fn check_compatible(base: &ParamSet<f32>, inputs: &[MergeInput<'_>]) -> CliResult<()> {
    let bad: Vec<String> = inputs
        .iter()
        .filter(|i| !base.is_compatible(i.model))
        .map(|i| format!("{} has shapes {:?}", i.domain_id, i.model.shapes()))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Incompatible(format!("base has shapes {:?}; {}", base.shapes(), bad.join("; "))))
    }
}

pub fn task_vectors(base: &ParamSet<f32>, inputs: &[MergeInput<'_>]) -> CliResult<Vec<TaskVector<f32>>> {
    check_compatible(base, inputs)?;
    inputs
        .iter()
        .map(|i| {
            let mut t = task_vector(i.model, base)?;
            t.domain_id = Some(i.domain_id.to_string());
            Ok(t)
        })
        .collect()
}

pub fn run(method: Method, base: &ParamSet<f32>, inputs: &[MergeInput<'_>], s: &Settings) -> CliResult<Merged> {
    if inputs.is_empty() {
        return Err(CliError::Config("nothing to merge".into()));
    }
    let taus = task_vectors(base, inputs)?;
    let (mut params, adaptive) = match method {
        Method::Average => {
            let models: Vec<&ParamSet<f32>> = inputs.iter().map(|i| i.model).collect();
            (weight_averaging(&models)?, None)
        }
        Method::TaskArithmetic => (task_arithmetic(base, &taus, s.task_arithmetic_weight)?, None),
        Method::Ties => (ties_merge(base, &taus, s.ties_density, s.ties_weight, s.ties_scope)?, None),
        Method::AdaMerging(mode) | Method::MergeRec(mode) => {
            let pseudo = inputs
                .iter()
                .map(|i| pseudo_data(i.domain_id, i.catalog, s.probe_fraction, s.adaptive.seed))
                .collect::<CliResult<Vec<_>>>()?;
            let domains: Vec<MergeDomain<f32>> = inputs
                .iter()
                .zip(&pseudo)
                .map(|(i, p)| MergeDomain {
                    catalog: i.catalog,
                    pseudo_users: &p.users,
                    teacher: Some(i.model),
                    pool: Some(&p.pool),
                })
                .collect();
            let out = if matches!(method, Method::AdaMerging(_)) {
                adamerging(base, &taus, &domains, mode, &s.adaptive)?
            } else {
                mergerec(base, &taus, &domains, mode, &s.adaptive)?
            };
            (out.params.clone(), Some(out))
        }
    };
    params.meta.seed = s.adaptive.seed;
    params.meta.notes.insert("method".into(), method.to_string());
    let ids: Vec<&str> = inputs.iter().map(|i| i.domain_id).collect();
    params.meta.notes.insert("inputs".into(), ids.join(","));
    Ok(Merged { params, adaptive })
}

/// Held-out pseudo-users of each input labeled with its teacher's top-1
/// items.
pub fn probe_sets<'a>(
    inputs: &[MergeInput<'a>],
    probe_fraction: f64,
    seed: u64,
    scoring: &Scoring<f32>,
) -> CliResult<Vec<ProbeSet<'a, f32>>> {
    inputs
        .iter()
        .map(|i| {
            let p = pseudo_data(i.domain_id, i.catalog, probe_fraction, seed)?;
            if p.probe.is_empty() {
                return Err(CliError::Config(format!(
                    "domain {:?}: merge.probe_fraction {probe_fraction} leaves no probe pseudo-users",
                    i.domain_id
                )));
            }
            let teacher = teacher_pass(i.model, i.catalog, &p.users, scoring)?;
            let items: Vec<usize> = p.probe.iter().map(|&n| p.users.item(n)).collect();
            let labels = p.probe.iter().map(|&n| teacher.labels[n]).collect();
            Ok(ProbeSet { catalog: i.catalog, items, labels })
        })
        .collect()
}
