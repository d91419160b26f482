//! `pretrain`, `finetune`, `merge` and `eval`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Deserialize;

use mergelab_core::corpus::{read_feature_tsv, Catalog};
use mergelab_core::evaluation::{recall_ndcg_at_k, Column, MetricReport, ReportRow};
use mergelab_core::merging::Sampling;
use mergelab_core::recmodel::{checkpoint, ParamSet};

use crate::config::parse_scope;
use crate::error::{CliError, CliResult, StageContext};
use crate::methods::{self, MergeInput, Method, Settings};
use crate::workspace::Workspace;

fn seeds(ws: &Workspace, seed: Option<u64>) -> CliResult<Vec<u64>> {
    match seed {
        Some(s) if !ws.cfg().seeds.contains(&s) => {
            Err(CliError::Config(format!("seed {s} is not among the configured seeds {:?}", ws.cfg().seeds)))
        }
        Some(s) => Ok(vec![s]),
        None => Ok(ws.cfg().seeds.clone()),
    }
}

fn domains(ws: &Workspace, only: Option<&[String]>) -> CliResult<Vec<String>> {
    let all = ws.cfg().domain_ids();
    match only {
        None => Ok(all),
        Some(list) => {
            if let Some(bad) = list.iter().find(|d| !all.contains(d)) {
                return Err(CliError::Config(format!("unknown domain {bad:?}; configured: {}", all.join(", "))));
            }
            Ok(list.to_vec())
        }
    }
}

pub fn pretrain(ws: &Workspace) -> CliResult<()> {
    ws.ensure_base()?;
    println!("{}", ws.base_path().display());
    Ok(())
}

/// Fine-tunes every selected domain for every selected seed and writes the
/// domain catalogs.
pub fn finetune(ws: &Workspace, domain: Option<&str>, seed: Option<u64>) -> CliResult<()> {
    let base = ws.existing_base().stage(|| "finetune".into())?;
    let only = domain.map(|d| vec![d.to_string()]);
    let wanted = domains(ws, only.as_deref())?;
    let corpus = ws.corpus()?;
    let selected: Vec<_> = corpus.into_iter().filter(|d| wanted.contains(&d.domain_id)).collect();
    ws.write_catalogs(&selected)?;
    let seeds = seeds(ws, seed)?;
    for &s in &seeds {
        for ds in &selected {
            ws.ensure_finetuned(&base, ds, s, None)?;
            println!("{}", ws.finetuned_path(s, &ds.domain_id, None).display());
        }
    }
    info!("{} checkpoint(s) over {} seed(s)", selected.len() * seeds.len(), seeds.len());
    Ok(())
}

/// A merge recipe file. Paths are relative to the recipe and may contain
/// `{seed}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRecipe {
    pub method: String,
    #[serde(default)]
    pub mode: Option<String>,
    /// Output stem; `<method>-<mode>` by default.
    #[serde(default)]
    pub name: Option<String>,
    /// Merged domains; every configured domain by default.
    #[serde(default)]
    pub domains: Option<Vec<String>>,
    #[serde(default)]
    pub base: Option<PathBuf>,
    /// Per-domain checkpoint overrides.
    #[serde(default)]
    pub models: BTreeMap<String, PathBuf>,
    /// Per-domain catalog overrides.
    #[serde(default)]
    pub catalogs: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub init: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub sampling: Option<String>,
    #[serde(default)]
    pub probe_fraction: Option<f64>,
    /// Task arithmetic or TIES scaling.
    #[serde(default)]
    pub weight: Option<f64>,
    #[serde(default)]
    pub density: Option<f64>,
    #[serde(default)]
    pub scope: Option<String>,
}

impl MergeRecipe {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read recipe {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn settings(&self, base: Settings) -> CliResult<Settings> {
        let mut s = base;
        let a = &mut s.adaptive;
        if let Some(v) = self.steps {
            a.steps = v;
        }
        if let Some(v) = self.lr {
            a.lr = v as f32;
        }
        if let Some(v) = self.batch_size {
            a.batch_size = v;
        }
        if let Some(v) = self.init {
            a.init = v as f32;
        }
        if let Some(v) = self.lambda {
            a.lambda = v as f32;
        }
        if let Some(v) = &self.sampling {
            a.sampling = v.parse::<Sampling>()?;
        }
        if let Some(v) = self.probe_fraction {
            s.probe_fraction = v;
        }
        if let Some(v) = self.weight {
            s.task_arithmetic_weight = v as f32;
            s.ties_weight = v as f32;
        }
        if let Some(v) = self.density {
            s.ties_density = v;
        }
        if let Some(v) = &self.scope {
            s.ties_scope = parse_scope(v)?;
        }
        Ok(s)
    }
}

fn with_seed(p: &Path, seed: u64) -> PathBuf {
    PathBuf::from(p.to_string_lossy().replace("{seed}", &seed.to_string()))
}

/// Merges fine-tuned checkpoints. Reads checkpoints and catalogs only.
pub fn merge(ws: &Workspace, recipe_path: &Path, seed: Option<u64>) -> CliResult<()> {
    let recipe = MergeRecipe::from_path(recipe_path)?;
    let method = Method::parse(&recipe.method, recipe.mode.as_deref())?;
    let wanted = domains(ws, recipe.domains.as_deref())?;
    let rdir = recipe_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let rel = |p: &Path, s: u64| {
        let p = with_seed(p, s);
        if p.is_absolute() {
            p
        } else {
            rdir.join(p)
        }
    };
    let name = recipe.name.clone().unwrap_or_else(|| method.to_string());
    let catalogs = wanted
        .iter()
        .map(|d| {
            let path = recipe.catalogs.get(d).map_or_else(|| ws.catalog_path(d), |p| rel(p, 0));
            read_feature_tsv::<f32>(&path)
        })
        .collect::<Result<Vec<Catalog<f32>>, _>>()?;
    for s in seeds(ws, seed)? {
        let base_path = recipe.base.as_ref().map_or_else(|| ws.base_path(), |p| rel(p, s));
        let base = checkpoint::load::<f32>(&base_path)?;
        let models = wanted
            .iter()
            .map(|d| {
                let path = recipe.models.get(d).map_or_else(|| ws.finetuned_path(s, d, None), |p| rel(p, s));
                checkpoint::load::<f32>(&path)
            })
            .collect::<Result<Vec<ParamSet<f32>>, _>>()?;
        let inputs: Vec<MergeInput> = wanted
            .iter()
            .zip(&catalogs)
            .zip(&models)
            .map(|((d, c), m)| MergeInput { domain_id: d, catalog: c, model: m })
            .collect();
        let settings = recipe.settings(Settings::from_config(ws.cfg(), s)?)?;
        let merged = methods::run(method, &base, &inputs, &settings).stage(|| format!("merge {name} seed {s}"))?;
        let dir = ws.merged_dir(s);
        let ckpt = dir.join(format!("{name}.ckpt"));
        ws.save_checkpoint(&merged.params, &ckpt, None)?;
        if let Some(a) = &merged.adaptive {
            ws.write_text(&dir.join(format!("{name}.trajectory.tsv")), Some(s), &a.trajectory_log(&wanted))?;
            info!("seed {s}: final weights {:?}", a.weights.values);
        }
        println!("{}", ckpt.display());
    }
    Ok(())
}

/// Evaluates a checkpoint (path template with optional `{seed}`) on the
/// test split of each domain, normalized by that seed's fine-tuned models.
pub fn eval(ws: &Workspace, template: &Path, only: Option<&[String]>, seed: Option<u64>) -> CliResult<MetricReport> {
    let wanted = domains(ws, only)?;
    let corpus = ws.corpus()?;
    let cfg = ws.cfg();
    let scoring = cfg.scoring();
    let name = template
        .file_stem()
        .map(|s| s.to_string_lossy().replace("{seed}", "").trim_matches(|c| c == '.' || c == '-').to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "model".into());
    let mut report = MetricReport::new(cfg.eval.k);
    let seeds = seeds(ws, seed)?;
    for &s in &seeds {
        let model = checkpoint::load::<f32>(with_seed(template, s))?;
        for ds in corpus.iter().filter(|d| wanted.contains(&d.domain_id)) {
            let m = recall_ndcg_at_k(&model, ds, cfg.eval.k, &scoring).stage(|| format!("eval {}", ds.domain_id))?;
            let ref_path = ws.finetuned_path(s, &ds.domain_id, None);
            let reference = match checkpoint::load::<f32>(&ref_path) {
                Ok(r) => Some(recall_ndcg_at_k(&r, ds, cfg.eval.k, &scoring)?),
                Err(_) => {
                    warn!("no fine-tuned reference at {}; normalized columns unavailable", ref_path.display());
                    None
                }
            };
            report.rows.push(ReportRow::new(&name, &ds.domain_id, s, m).normalized_by(reference));
        }
    }
    let seed_label = (seeds.len() == 1).then(|| seeds[0]);
    ws.write_text(&ws.out.join("eval").join(format!("{name}.tsv")), seed_label, &report.to_records())?;
    let mut table = String::new();
    for col in Column::ALL {
        let _ = writeln!(table, "{}\n{}", col.name(report.k), report.to_table(col));
    }
    print!("{table}");
    Ok(report)
}
