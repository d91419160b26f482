//! Artifact layout, manifest headers, corpus loading and the checkpoint
//! cache.
//!
//! ```text
//! <out>/base.ckpt, base.log
//! <out>/catalogs/<domain>.tsv
//! <out>/seed-<n>/finetuned/<domain>.ckpt (+ .log; <domain>@<pct>.ckpt when subsampled)
//! <out>/seed-<n>/joint.ckpt
//! <out>/seed-<n>/merged/<name>.ckpt, <name>.trajectory.tsv
//! <out>/eval/<name>.tsv
//! <out>/experiments/<recipe>/...
//! ```
//!
//! Trained checkpoints carry a `key` note: a digest of every setting that
//! influences them. An existing checkpoint whose key matches is reused.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;

use mergelab_core::corpus::{
    five_core_filter, format_feature_tsv, ingest_tsv, item_ids_in_order, read_feature_tsv, synthesize_domains, Catalog,
    DomainDataset,
};
use mergelab_core::recmodel::{checkpoint, ParamSet};
use mergelab_core::rng;
use mergelab_core::training::{finetune, joint_train, pretrain_base, TrainOutcome};

use crate::config::{canonical, digest, DomainEntry, Loaded, Source};
use crate::error::{CliError, CliResult, StageContext};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First line of every text output.
pub fn manifest(hash: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or_else(|| "all".to_string(), |s| s.to_string());
    format!("# mergelab {VERSION} config={hash} seed={seed}\n")
}

/// `0.05` -> `"5%"`.
pub fn percent(fraction: f64) -> String {
    let s = format!("{:.4}", fraction * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

pub struct Workspace {
    pub loaded: Loaded,
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(loaded: Loaded, out: Option<PathBuf>) -> Self {
        let out = out.unwrap_or_else(|| loaded.resolve(&loaded.config.out_dir));
        Self { loaded, out }
    }

    pub fn cfg(&self) -> &crate::config::Config {
        &self.loaded.config
    }

    pub fn hash(&self) -> &str {
        self.loaded.short_hash()
    }

    pub fn base_path(&self) -> PathBuf {
        self.out.join("base.ckpt")
    }

    pub fn catalog_path(&self, domain: &str) -> PathBuf {
        self.out.join("catalogs").join(format!("{domain}.tsv"))
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn finetuned_path(&self, seed: u64, domain: &str, fraction: Option<f64>) -> PathBuf {
        let name = match fraction {
            Some(f) => format!("{domain}@{}.ckpt", percent(f)),
            None => format!("{domain}.ckpt"),
        };
        self.seed_dir(seed).join("finetuned").join(name)
    }

    pub fn joint_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("joint.ckpt")
    }

    pub fn merged_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("merged")
    }

    pub fn experiment_dir(&self, recipe: &str) -> PathBuf {
        self.out.join("experiments").join(recipe)
    }

    /// Writes `body` under a manifest header, creating parent directories.
    pub fn write_text(&self, path: &Path, seed: Option<u64>, body: &str) -> CliResult<()> {
        let mut text = manifest(self.hash(), seed);
        text.push_str(body);
        write_file(path, text.as_bytes())
    }

    /// Adds provenance notes and saves.
    pub fn save_checkpoint(&self, params: &ParamSet<f32>, path: &Path, key: Option<&str>) -> CliResult<()> {
        let mut p = params.clone();
        p.meta.notes.insert("config".into(), self.hash().to_string());
        p.meta.notes.insert("version".into(), format!("mergelab-{VERSION}"));
        if let Some(k) = key {
            p.meta.notes.insert("key".into(), k.to_string());
        }
        checkpoint::save(&p, path)?;
        Ok(())
    }

    fn cached(&self, path: &Path, key: &str) -> Option<ParamSet<f32>> {
        if !path.exists() {
            return None;
        }
        let p = checkpoint::load::<f32>(path).ok()?;
        (p.meta.notes.get("key").map(String::as_str) == Some(key)).then_some(p)
    }

    // ---- cache keys ----

    fn shared_corpus_parts(&self) -> CliResult<Vec<String>> {
        let c = &self.cfg().corpus;
        Ok(vec![
            format!("{:?}", c.source),
            canonical(&c.features)?,
            format!("{:?} {} {}", c.shared, c.affinity, c.carryover),
        ])
    }

    pub fn base_key(&self) -> CliResult<String> {
        let cfg = self.cfg();
        let mut parts =
            vec!["base".to_string(), canonical(&cfg.pretrain)?, canonical(&cfg.model)?, canonical(&cfg.train)?];
        parts.extend(self.shared_corpus_parts()?);
        Ok(digest(&parts.iter().map(String::as_str).collect::<Vec<_>>()))
    }

    fn data_key(&self) -> CliResult<String> {
        let c = &self.cfg().corpus;
        let mut parts = vec!["data".to_string(), c.seed.to_string()];
        for d in &c.domains {
            parts.push(canonical(d)?);
            for p in d.path.iter().chain(&d.features) {
                let p = self.loaded.resolve(p);
                let bytes =
                    std::fs::read(&p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                parts.push(digest(&[&String::from_utf8_lossy(&bytes)]));
            }
        }
        parts.extend(self.shared_corpus_parts()?);
        Ok(digest(&parts.iter().map(String::as_str).collect::<Vec<_>>()))
    }

    pub fn finetune_key(&self, seed: u64, domain: &str, fraction: Option<f64>) -> CliResult<String> {
        let (b, d) = (self.base_key()?, self.data_key()?);
        let frac = format!("{fraction:?}");
        Ok(digest(&["finetune", &b, &d, &seed.to_string(), domain, &frac]))
    }

    pub fn joint_key(&self, seed: u64) -> CliResult<String> {
        let (b, d) = (self.base_key()?, self.data_key()?);
        Ok(digest(&["joint", &b, &d, &seed.to_string()]))
    }

    // ---- corpora ----

    fn load_domains(&self, entries: &[DomainEntry], synth_seed: u64) -> CliResult<Vec<DomainDataset<f32>>> {
        let c = &self.cfg().corpus;
        let f = &c.features;
        match c.source {
            Source::Synthetic => {
                let raw = synthesize_domains(&self.cfg().synthetic_spec(entries), synth_seed)?;
                entries
                    .iter()
                    .zip(&raw)
                    .map(|(e, r)| {
                        DomainDataset::prepare(e.id.clone(), r, f.dim, f.active, f.seed)
                            .stage(|| format!("preparing domain {}", e.id))
                    })
                    .collect()
            }
            Source::Tsv => entries
                .iter()
                .map(|e| {
                    let path = self.loaded.resolve(e.path.as_deref().expect("validated"));
                    let raw = ingest_tsv(&path)?;
                    let filtered = five_core_filter(&raw);
                    let catalog = match &e.features {
                        Some(fp) => {
                            let cat = read_feature_tsv::<f32>(self.loaded.resolve(fp))?;
                            if cat.dim() != f.dim {
                                return Err(CliError::Config(format!(
                                    "{}: features have dimension {}, config says {}",
                                    fp.display(),
                                    cat.dim(),
                                    f.dim
                                )));
                            }
                            cat
                        }
                        None => Catalog::hashed(item_ids_in_order(&filtered), f.dim, f.active, f.seed)?,
                    };
                    Ok(DomainDataset::from_interactions(e.id.clone(), &filtered, catalog)?)
                })
                .collect(),
        }
    }

    pub fn corpus(&self) -> CliResult<Vec<DomainDataset<f32>>> {
        let c = &self.cfg().corpus;
        let out = self.load_domains(&c.domains, c.seed).stage(|| "loading corpus".into())?;
        for d in &out {
            info!("domain {}: {} users, {} items", d.domain_id, d.users.len(), d.catalog.len());
        }
        Ok(out)
    }

    pub fn pretrain_corpus(&self) -> CliResult<Vec<DomainDataset<f32>>> {
        let p = &self.cfg().pretrain;
        self.load_domains(&p.domains, p.seed).stage(|| "loading pre-training corpus".into())
    }

    // ---- training stages ----

    fn training_log(&self, corpus: &[&DomainDataset<f32>], outcome: &TrainOutcome<f32>) -> String {
        let d = self.cfg().dims();
        let mut body =
            format!("dims\tinput={}\thidden={}\toutput={}\tlayers={}\n", d.input, d.hidden, d.output, d.layers);
        for ds in corpus {
            let _ = writeln!(
                body,
                "corpus\t{}\tusers={}\titems={}\tinteractions={}",
                ds.domain_id,
                ds.users.len(),
                ds.catalog.len(),
                ds.interaction_count()
            );
        }
        let _ = writeln!(body, "best_epoch\t{}\nepochs_run\t{}", outcome.best_epoch, outcome.epochs_run);
        body.push_str(&outcome.log());
        body
    }

    /// The base model, trained unless a matching checkpoint exists.
    pub fn ensure_base(&self) -> CliResult<ParamSet<f32>> {
        let key = self.base_key()?;
        let path = self.base_path();
        if let Some(p) = self.cached(&path, &key) {
            info!("reusing {}", path.display());
            return Ok(p);
        }
        let corpus = self.pretrain_corpus()?;
        let cfg = self.cfg().train_config(self.cfg().pretrain.train_seed);
        info!("pre-training on {} domains", corpus.len());
        let outcome = pretrain_base(&corpus, &self.cfg().dims(), &cfg).stage(|| "pretrain".into())?;
        self.save_checkpoint(&outcome.params, &path, Some(&key))?;
        let refs: Vec<&DomainDataset<f32>> = corpus.iter().collect();
        self.write_text(&self.out.join("base.log"), Some(cfg.seed), &self.training_log(&refs, &outcome))?;
        checkpoint::load(&path).map_err(Into::into)
    }

    /// The base checkpoint as written by `pretrain`; errors when missing or
    /// produced under different settings.
    pub fn existing_base(&self) -> CliResult<ParamSet<f32>> {
        let path = self.base_path();
        let p = checkpoint::load::<f32>(&path)?;
        if p.meta.notes.get("key") != Some(&self.base_key()?) {
            return Err(CliError::Config(format!(
                "{} was pre-trained under different settings; rerun pretrain",
                path.display()
            )));
        }
        Ok(p)
    }

    /// Users kept when fine-tuning on a `fraction` of a domain.
    pub fn subsample(&self, ds: &DomainDataset<f32>, seed: u64, fraction: f64) -> DomainDataset<f32> {
        let n = ds.users.len();
        let keep_n = ((fraction * n as f64).round() as usize).clamp(1, n);
        let mut pos: Vec<usize> = (0..n).collect();
        pos.shuffle(&mut rng::stream(seed, &format!("scarcity/{}/{}", ds.domain_id, percent(fraction))));
        let mut keep = pos[..keep_n].to_vec();
        keep.sort_unstable();
        ds.with_users(&keep)
    }

    /// A fine-tuned model of one domain for one seed, optionally trained on a
    /// user subsample; trained unless cached. A fraction of 1 is the full
    /// domain.
    pub fn ensure_finetuned(
        &self,
        base: &ParamSet<f32>,
        ds: &DomainDataset<f32>,
        seed: u64,
        fraction: Option<f64>,
    ) -> CliResult<ParamSet<f32>> {
        let fraction = fraction.filter(|&f| f < 1.0);
        let key = self.finetune_key(seed, &ds.domain_id, fraction)?;
        let path = self.finetuned_path(seed, &ds.domain_id, fraction);
        if let Some(p) = self.cached(&path, &key) {
            return Ok(p);
        }
        let sub;
        let train_on = match fraction {
            Some(f) => {
                sub = self.subsample(ds, seed, f);
                &sub
            }
            None => ds,
        };
        info!("fine-tuning {} (seed {seed}, {} users)", path.display(), train_on.users.len());
        let outcome = finetune(base, train_on, &self.cfg().train_config(seed))
            .stage(|| format!("finetune {} seed {seed}", ds.domain_id))?;
        self.save_checkpoint(&outcome.params, &path, Some(&key))?;
        self.write_text(&path.with_extension("log"), Some(seed), &self.training_log(&[train_on], &outcome))?;
        checkpoint::load(&path).map_err(Into::into)
    }

    pub fn ensure_joint(
        &self,
        base: &ParamSet<f32>,
        corpus: &[DomainDataset<f32>],
        seed: u64,
    ) -> CliResult<ParamSet<f32>> {
        let key = self.joint_key(seed)?;
        let path = self.joint_path(seed);
        if let Some(p) = self.cached(&path, &key) {
            return Ok(p);
        }
        let refs: Vec<&DomainDataset<f32>> = corpus.iter().collect();
        info!("joint training (seed {seed})");
        let outcome =
            joint_train(base, &refs, &self.cfg().train_config(seed)).stage(|| format!("joint seed {seed}"))?;
        self.save_checkpoint(&outcome.params, &path, Some(&key))?;
        self.write_text(&path.with_extension("log"), Some(seed), &self.training_log(&refs, &outcome))?;
        checkpoint::load(&path).map_err(Into::into)
    }

    /// Writes each domain's item catalog, the only per-domain data the merge
    /// stage reads besides checkpoints.
    pub fn write_catalogs(&self, corpus: &[DomainDataset<f32>]) -> CliResult<()> {
        for ds in corpus {
            self.write_text(&self.catalog_path(&ds.domain_id), None, &format_feature_tsv(&ds.catalog))?;
        }
        Ok(())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_labels() {
        assert_eq!(percent(0.01), "1%");
        assert_eq!(percent(0.1), "10%");
        assert_eq!(percent(0.125), "12.5%");
        assert_eq!(percent(1.0), "100%");
    }

    #[test]
    fn manifest_line() {
        assert_eq!(manifest("abc", Some(3)), format!("# mergelab {VERSION} config=abc seed=3\n"));
        assert!(manifest("abc", None).ends_with("seed=all\n"));
    }
}
