//! End-to-end study recipes. Each runs over the configured seeds and writes
//! to `<out>/experiments/<recipe>/`.

use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;
use rayon::prelude::*;

use mergelab_core::corpus::DomainDataset;
use mergelab_core::evaluation::{
    dynamics_probe, group_analysis, history_length_bins, mean, normalize, one_tailed_welch_t, recall_ndcg_at_k, Column,
    DynamicsPoint, GroupMetrics, MetricReport, ReportRow,
};
use mergelab_core::merging::{merge, MergeMode};
use mergelab_core::recmodel::ParamSet;

use crate::error::{CliError, CliResult, StageContext};
use crate::methods::{self, MergeInput, Merged, Method, Settings};
use crate::workspace::{percent, Workspace};

pub const RECIPES: [&str; 7] =
    ["overall", "scarcity", "unseen", "domain_count_sweep", "group_analysis", "lambda_sweep", "dynamics"];

const DW: MergeMode = MergeMode::DomainWise;
const LW: MergeMode = MergeMode::LayerWise;

/// Merging methods compared where the study uses one variant per family.
const CORE_METHODS: [Method; 4] = [Method::TaskArithmetic, Method::Ties, Method::AdaMerging(DW), Method::MergeRec(DW)];

pub fn run(ws: &Workspace, recipe: &str, seed: Option<u64>) -> CliResult<()> {
    if !RECIPES.contains(&recipe) {
        return Err(CliError::Config(format!("unknown recipe {recipe:?}; expected one of {}", RECIPES.join(", "))));
    }
    let seeds = match seed {
        Some(s) if !ws.cfg().seeds.contains(&s) => {
            return Err(CliError::Config(format!("seed {s} is not among the configured seeds")))
        }
        Some(s) => vec![s],
        None => ws.cfg().seeds.clone(),
    };
    let corpus = ws.corpus()?;
    ws.write_catalogs(&corpus)?;
    let base = ws.ensure_base()?;
    let ctx = Ctx { ws, corpus: &corpus, base: &base, seeds, dir: ws.experiment_dir(recipe) };
    info!("running {recipe} over seeds {:?}", ctx.seeds);
    match recipe {
        "overall" => overall(&ctx),
        "scarcity" => scarcity(&ctx),
        "unseen" => unseen(&ctx),
        "domain_count_sweep" => domain_count_sweep(&ctx),
        "group_analysis" => groups(&ctx),
        "lambda_sweep" => lambda_sweep(&ctx),
        "dynamics" => dynamics(&ctx),
        _ => unreachable!(),
    }
    .stage(|| recipe.to_string())
}

struct Ctx<'a> {
    ws: &'a Workspace,
    corpus: &'a [DomainDataset<f32>],
    base: &'a ParamSet<f32>,
    seeds: Vec<u64>,
    dir: PathBuf,
}

impl<'a> Ctx<'a> {
    fn k(&self) -> usize {
        self.ws.cfg().eval.k
    }

    fn eval(&self, model: &ParamSet<f32>, ds: &DomainDataset<f32>) -> CliResult<(f64, f64)> {
        recall_ndcg_at_k(model, ds, self.k(), &self.ws.cfg().scoring()).stage(|| format!("eval {}", ds.domain_id))
    }

    fn index(&self, id: &str) -> usize {
        self.corpus.iter().position(|d| d.domain_id == id).expect("validated domain id")
    }

    fn finetuned(&self, seed: u64) -> CliResult<Vec<ParamSet<f32>>> {
        self.corpus.iter().map(|ds| self.ws.ensure_finetuned(self.base, ds, seed, None)).collect()
    }

    fn references(&self, fts: &[ParamSet<f32>]) -> CliResult<Vec<(f64, f64)>> {
        self.corpus.iter().zip(fts).map(|(ds, m)| self.eval(m, ds)).collect()
    }

    fn inputs<'b>(&'b self, idx: &[usize], models: &'b [ParamSet<f32>]) -> Vec<MergeInput<'b>> {
        idx.iter()
            .map(|&i| MergeInput {
                domain_id: &self.corpus[i].domain_id,
                catalog: &self.corpus[i].catalog,
                model: &models[i],
            })
            .collect()
    }

    fn settings(&self, seed: u64) -> CliResult<Settings> {
        Settings::from_config(self.ws.cfg(), seed)
    }

    fn merge(&self, method: Method, inputs: &[MergeInput<'_>], s: &Settings) -> CliResult<Merged> {
        methods::run(method, self.base, inputs, s).stage(|| format!("{method} seed {}", s.adaptive.seed))
    }

    /// Runs `f` for every seed, in parallel, keeping seed order.
    fn per_seed<R: Send>(&self, f: impl Fn(u64) -> CliResult<R> + Sync + Send) -> CliResult<Vec<R>> {
        self.seeds.par_iter().map(|&s| f(s)).collect()
    }

    fn seed_label(&self) -> Option<u64> {
        (self.seeds.len() == 1).then(|| self.seeds[0])
    }

    fn write(&self, name: &str, body: &str) -> CliResult<()> {
        self.ws.write_text(&self.dir.join(name), self.seed_label(), body)
    }

    fn all(&self) -> Vec<usize> {
        (0..self.corpus.len()).collect()
    }

    fn default_or(&self, ids: &[String]) -> Vec<usize> {
        if ids.is_empty() {
            vec![self.corpus.len() - 1]
        } else {
            ids.iter().map(|d| self.index(d)).collect()
        }
    }
}

fn tables(report: &MetricReport) -> String {
    let mut out = String::new();
    for col in [Column::NormRecall, Column::NormNdcg, Column::Recall, Column::Ndcg] {
        let _ = writeln!(out, "[{}]\n{}", col.name(report.k), report.to_table(col));
    }
    out
}

fn finish(ctx: &Ctx<'_>, report: &MetricReport, extra: &str) -> CliResult<()> {
    ctx.write("results.tsv", &report.to_records())?;
    let text = format!("{}{extra}", tables(report));
    ctx.write("table.txt", &text)?;
    print!("{text}");
    Ok(())
}

fn trajectory(ctx: &Ctx<'_>, method: Method, seed: u64, merged: &Merged, ids: &[String]) -> CliResult<()> {
    if let Some(a) = &merged.adaptive {
        let path = ctx.dir.join("trajectories").join(format!("{method}.seed-{seed}.tsv"));
        ctx.ws.write_text(&path, Some(seed), &a.trajectory_log(ids))?;
    }
    Ok(())
}

// ---- overall ----

const OVERALL_METHODS: [Method; 7] = [
    Method::Average,
    Method::TaskArithmetic,
    Method::Ties,
    Method::AdaMerging(DW),
    Method::AdaMerging(LW),
    Method::MergeRec(DW),
    Method::MergeRec(LW),
];

fn overall(ctx: &Ctx<'_>) -> CliResult<()> {
    let ids: Vec<String> = ctx.corpus.iter().map(|d| d.domain_id.clone()).collect();
    let per_seed = ctx.per_seed(|s| {
        let fts = ctx.finetuned(s)?;
        let refs = ctx.references(&fts)?;
        let joint = ctx.ws.ensure_joint(ctx.base, ctx.corpus, s)?;
        let inputs = ctx.inputs(&ctx.all(), &fts);
        let settings = ctx.settings(s)?;
        let mut models: Vec<(String, ParamSet<f32>)> =
            vec![("zero-shot".into(), ctx.base.clone()), ("joint".into(), joint)];
        for m in OVERALL_METHODS {
            let merged = ctx.merge(m, &inputs, &settings)?;
            trajectory(ctx, m, s, &merged, &ids)?;
            models.push((m.to_string(), merged.params));
        }
        let mut rows: Vec<ReportRow> = ctx
            .corpus
            .iter()
            .zip(&refs)
            .map(|(ds, &r)| ReportRow::new("fine-tuned", &ds.domain_id, s, r).normalized_by(Some(r)))
            .collect();
        for (name, model) in &models {
            for (ds, &r) in ctx.corpus.iter().zip(&refs) {
                rows.push(ReportRow::new(name, &ds.domain_id, s, ctx.eval(model, ds)?).normalized_by(Some(r)));
            }
        }
        Ok(rows)
    })?;
    let mut report = MetricReport::new(ctx.k());
    report.rows = per_seed.into_iter().flatten().collect();
    let welch = welch_lines(&report);
    ctx.write("welch.tsv", &welch)?;
    finish(ctx, &report, &format!("[one-tailed welch t-test, normalized recall@{}]\n{welch}", ctx.k()))
}

/// MergeRec variants against the best other merging method on per-seed
/// average normalized recall.
fn welch_lines(report: &MetricReport) -> String {
    let col = Column::NormRecall;
    let methods = report.methods();
    let baselines: Vec<String> = OVERALL_METHODS
        .iter()
        .map(ToString::to_string)
        .filter(|m| !m.starts_with("mergerec") && methods.contains(m))
        .collect();
    let best =
        baselines.iter().filter_map(|m| report.average(m, col).map(|(v, _)| (m, v))).max_by(|a, b| a.1.total_cmp(&b.1));
    let mut out = String::from("method\tbaseline\tt\tdof\tp\tdegenerate\n");
    let Some((best, _)) = best else {
        return out;
    };
    for m in methods.iter().filter(|m| m.starts_with("mergerec")) {
        let a = report.seed_averages(m, col);
        let b = report.seed_averages(best, col);
        match one_tailed_welch_t(&a, &b) {
            Some(w) => {
                let _ = writeln!(out, "{m}\t{best}\t{:.4}\t{:.2}\t{:.6}\t{}", w.t, w.dof, w.p, w.degenerate);
            }
            None => {
                let _ = writeln!(out, "{m}\t{best}\tNA\tNA\tNA\tNA");
            }
        }
    }
    out
}

// ---- scarcity ----

fn scarcity(ctx: &Ctx<'_>) -> CliResult<()> {
    let x = &ctx.ws.cfg().experiment;
    let targets = ctx.default_or(&x.scarcity_targets);
    let ids: Vec<String> = ctx.corpus.iter().map(|d| d.domain_id.clone()).collect();
    let per_seed = ctx.per_seed(|s| {
        let fts = ctx.finetuned(s)?;
        let refs = ctx.references(&fts)?;
        let settings = ctx.settings(s)?;
        let mut rows = Vec::new();
        for &t in &targets {
            let ds = &ctx.corpus[t];
            for &f in &x.scarcity_fractions {
                let label = format!("{}@{}", ds.domain_id, percent(f));
                let mut models = fts.clone();
                models[t] = ctx.ws.ensure_finetuned(ctx.base, ds, s, Some(f))?;
                rows.push(
                    ReportRow::new("fine-tuned", &label, s, ctx.eval(&models[t], ds)?).normalized_by(Some(refs[t])),
                );
                let inputs = ctx.inputs(&ctx.all(), &models);
                for m in CORE_METHODS {
                    let merged = ctx.merge(m, &inputs, &settings)?;
                    trajectory(ctx, m, s, &merged, &ids)?;
                    let r = ctx.eval(&merged.params, ds)?;
                    rows.push(ReportRow::new(&m.to_string(), &label, s, r).normalized_by(Some(refs[t])));
                }
            }
        }
        Ok(rows)
    })?;
    let mut report = MetricReport::new(ctx.k());
    report.rows = per_seed.into_iter().flatten().collect();
    let note = "columns are <target>@<share of target users used for fine-tuning>; \
                normalized by the target model fine-tuned on all users\n";
    finish(ctx, &report, note)
}

// ---- unseen ----

fn unseen(ctx: &Ctx<'_>) -> CliResult<()> {
    let held = ctx.default_or(&ctx.ws.cfg().experiment.unseen_domains);
    let sources: Vec<usize> = ctx.all().into_iter().filter(|i| !held.contains(i)).collect();
    if sources.is_empty() {
        return Err(CliError::Config("unseen needs at least one source domain".into()));
    }
    let source_ids: Vec<String> = sources.iter().map(|&i| ctx.corpus[i].domain_id.clone()).collect();
    let per_seed = ctx.per_seed(|s| {
        let fts = ctx.finetuned(s)?;
        let refs = ctx.references(&fts)?;
        let settings = ctx.settings(s)?;
        let inputs = ctx.inputs(&sources, &fts);
        let mut rows = Vec::new();
        let mut provenance = String::new();
        let mut models: Vec<(String, ParamSet<f32>)> = vec![("zero-shot".into(), ctx.base.clone())];
        for m in CORE_METHODS {
            let merged = ctx.merge(m, &inputs, &settings)?;
            trajectory(ctx, m, s, &merged, &source_ids)?;
            models.push((m.to_string(), merged.params));
        }
        for &u in &held {
            let ds = &ctx.corpus[u];
            rows.push(ReportRow::new("fine-tuned", &ds.domain_id, s, refs[u]).normalized_by(Some(refs[u])));
            for (name, model) in &models {
                let inputs_note = model.meta.notes.get("inputs").cloned().unwrap_or_default();
                if inputs_note.split(',').any(|d| d == ds.domain_id) {
                    return Err(CliError::Config(format!("{name} was merged from {} itself", ds.domain_id)));
                }
                let _ = writeln!(
                    provenance,
                    "{s}\t{name}\t{}\t{}",
                    if inputs_note.is_empty() { "-" } else { &inputs_note },
                    ds.domain_id
                );
                rows.push(ReportRow::new(name, &ds.domain_id, s, ctx.eval(model, ds)?).normalized_by(Some(refs[u])));
            }
        }
        Ok((rows, provenance))
    })?;
    let mut report = MetricReport::new(ctx.k());
    let mut provenance = String::from("seed\tmethod\tmerged_inputs\tevaluated_domain\n");
    for (rows, p) in per_seed {
        report.rows.extend(rows);
        provenance.push_str(&p);
    }
    ctx.write("provenance.tsv", &provenance)?;
    finish(ctx, &report, &format!("merged source domains: {}\n", source_ids.join(", ")))
}

// ---- domain count sweep ----

fn domain_count_sweep(ctx: &Ctx<'_>) -> CliResult<()> {
    let k_max = ctx.corpus.len();
    let lo = ctx.ws.cfg().experiment.sweep_min;
    if lo > k_max {
        return Err(CliError::Config(format!("sweep_min {lo} exceeds the {k_max} configured domains")));
    }
    let counts: Vec<usize> = (lo..=k_max).collect();
    let per_seed = ctx.per_seed(|s| {
        let fts = ctx.finetuned(s)?;
        let refs = ctx.references(&fts)?;
        let settings = ctx.settings(s)?;
        let mut out = Vec::new();
        for &n in &counts {
            let idx: Vec<usize> = (0..n).collect();
            let inputs = ctx.inputs(&idx, &fts);
            for m in CORE_METHODS {
                let merged = ctx.merge(m, &inputs, &settings)?;
                for &i in &idx {
                    let ds = &ctx.corpus[i];
                    let row = ReportRow::new(&m.to_string(), &ds.domain_id, s, ctx.eval(&merged.params, ds)?);
                    out.push((n, row.normalized_by(Some(refs[i]))));
                }
            }
        }
        Ok(out)
    })?;
    let all: Vec<(usize, ReportRow)> = per_seed.into_iter().flatten().collect();
    let mut records = String::from("count\tdomain\tmethod\tmetric\tseed\tvalue\n");
    let mut table = format!("[average {} over the merged domains]\n{:<24}", Column::NormRecall.name(ctx.k()), "method");
    for n in &counts {
        let _ = write!(table, "  {:>8}", format!("K={n}"));
    }
    table.push('\n');
    let reports: Vec<MetricReport> = counts
        .iter()
        .map(|&n| MetricReport {
            k: ctx.k(),
            rows: all.iter().filter(|(c, _)| *c == n).map(|(_, r)| r.clone()).collect(),
        })
        .collect();
    for (n, r) in counts.iter().zip(&reports) {
        for line in r.to_records().lines() {
            let _ = writeln!(records, "{n}\t{line}");
        }
    }
    for m in CORE_METHODS {
        let _ = write!(table, "{:<24}", m.to_string());
        for r in &reports {
            let v = r.average(&m.to_string(), Column::NormRecall).map_or("-".into(), |(v, _)| format!("{v:.2}"));
            let _ = write!(table, "  {v:>8}");
        }
        table.push('\n');
    }
    ctx.write("sweep.tsv", &records)?;
    ctx.write("table.txt", &table)?;
    print!("{table}");
    Ok(())
}

// ---- group analysis ----

struct GroupRecord {
    domain: String,
    method: String,
    seed: u64,
    grouping: &'static str,
    index: usize,
    bin: String,
    users: usize,
    recall: f64,
    ndcg: f64,
    norm_recall: Option<f64>,
    norm_ndcg: Option<f64>,
}

fn groups(ctx: &Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.ws.cfg();
    let pop_bins = cfg.popularity_bins();
    let scoring = cfg.scoring();
    let per_seed = ctx.per_seed(|s| {
        let fts = ctx.finetuned(s)?;
        let settings = ctx.settings(s)?;
        let inputs = ctx.inputs(&ctx.all(), &fts);
        let mut models: Vec<(String, ParamSet<f32>)> = Vec::new();
        for m in CORE_METHODS {
            models.push((m.to_string(), ctx.merge(m, &inputs, &settings)?.params));
        }
        let mut out = Vec::new();
        for (i, ds) in ctx.corpus.iter().enumerate() {
            let len_bins = history_length_bins(ds, cfg.eval.length_bins);
            let analyse = |p: &ParamSet<f32>| group_analysis(p, ds, &len_bins, &pop_bins, ctx.k(), &scoring);
            let reference = analyse(&fts[i])?;
            let mut push = |name: &str, a: &mergelab_core::evaluation::GroupAnalysis| {
                for (grouping, got, refs) in [
                    ("history_length", &a.by_history_length, &reference.by_history_length),
                    ("popularity", &a.by_popularity, &reference.by_popularity),
                ] {
                    for (j, (g, r)) in got.iter().zip(refs.iter()).enumerate() {
                        out.push(record(ds, name, s, grouping, j, g, r));
                    }
                }
            };
            push("fine-tuned", &reference);
            for (name, model) in &models {
                push(name, &analyse(model)?);
            }
        }
        Ok(out)
    })?;
    let records: Vec<GroupRecord> = per_seed.into_iter().flatten().collect();
    let mut tsv = String::from("domain\tmethod\tseed\tgrouping\tbin\tusers\trecall\tndcg\tnorm_recall\tnorm_ndcg\n");
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.6}"));
    for r in &records {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
            r.domain,
            r.method,
            r.seed,
            r.grouping,
            r.bin,
            r.users,
            r.recall,
            r.ndcg,
            na(r.norm_recall),
            na(r.norm_ndcg)
        );
    }
    let mut table = String::new();
    let methods: Vec<String> =
        std::iter::once("fine-tuned".to_string()).chain(CORE_METHODS.iter().map(ToString::to_string)).collect();
    for (grouping, header) in [("history_length", "history-length quantile"), ("popularity", "target popularity")] {
        let n_bins = records.iter().filter(|r| r.grouping == grouping).map(|r| r.index + 1).max().unwrap_or(0);
        let _ = write!(table, "[normalized recall@{} by {header}]\n{:<24}", ctx.k(), "method");
        for j in 0..n_bins {
            let label = match pop_bins.get(j) {
                Some(b) if grouping == "popularity" => b.to_string(),
                _ => format!("q{}", j + 1),
            };
            let _ = write!(table, "  {label:>8}");
        }
        table.push('\n');
        for m in &methods {
            let _ = write!(table, "{m:<24}");
            for j in 0..n_bins {
                let vals: Vec<f64> = records
                    .iter()
                    .filter(|r| r.grouping == grouping && r.index == j && &r.method == m)
                    .filter_map(|r| r.norm_recall)
                    .collect();
                let cell = if vals.is_empty() { "-".to_string() } else { format!("{:.2}", mean(&vals)) };
                let _ = write!(table, "  {cell:>8}");
            }
            table.push('\n');
        }
        table.push('\n');
    }
    ctx.write("groups.tsv", &tsv)?;
    ctx.write("table.txt", &table)?;
    print!("{table}");
    Ok(())
}

fn record(
    ds: &DomainDataset<f32>,
    method: &str,
    seed: u64,
    grouping: &'static str,
    index: usize,
    g: &GroupMetrics,
    reference: &GroupMetrics,
) -> GroupRecord {
    let defined = g.users > 0;
    GroupRecord {
        domain: ds.domain_id.clone(),
        method: method.to_string(),
        seed,
        grouping,
        index,
        bin: g.bin.to_string(),
        users: g.users,
        recall: g.recall,
        ndcg: g.ndcg,
        norm_recall: normalize(g.recall, reference.recall).filter(|_| defined),
        norm_ndcg: normalize(g.ndcg, reference.ndcg).filter(|_| defined),
    }
}

// ---- lambda sweep ----

fn lambda_sweep(ctx: &Ctx<'_>) -> CliResult<()> {
    let grid = ctx.ws.cfg().experiment.lambda_grid.clone();
    if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(CliError::Config("experiment.lambda_grid needs finite values >= 0".into()));
    }
    let per_seed = ctx.per_seed(|s| {
        let fts = ctx.finetuned(s)?;
        let refs = ctx.references(&fts)?;
        let inputs = ctx.inputs(&ctx.all(), &fts);
        let mut rows = Vec::new();
        for mode in [DW, LW] {
            for &lambda in &grid {
                let mut settings = ctx.settings(s)?;
                settings.adaptive.lambda = lambda as f32;
                let merged = ctx.merge(Method::MergeRec(mode), &inputs, &settings)?;
                let name = format!("mergerec-{mode}@lambda={lambda}");
                for (ds, &r) in ctx.corpus.iter().zip(&refs) {
                    rows.push(
                        ReportRow::new(&name, &ds.domain_id, s, ctx.eval(&merged.params, ds)?).normalized_by(Some(r)),
                    );
                }
            }
        }
        Ok(rows)
    })?;
    let report = MetricReport { k: ctx.k(), rows: per_seed.into_iter().flatten().collect() };
    let mut tsv =
        format!("mode\tlambda\tseed\t{}\t{}\n", Column::NormRecall.name(ctx.k()), Column::NormNdcg.name(ctx.k()));
    let mut table = format!(
        "[average {} over domains]\n{:>10}  {:>10}  {:>10}\n",
        Column::NormRecall.name(ctx.k()),
        "lambda",
        DW.to_string(),
        LW.to_string()
    );
    for &lambda in &grid {
        let _ = write!(table, "{lambda:>10}");
        for mode in [DW, LW] {
            let name = format!("mergerec-{mode}@lambda={lambda}");
            let r = report.seed_averages(&name, Column::NormRecall);
            let n = report.seed_averages(&name, Column::NormNdcg);
            for ((s, r), n) in ctx.seeds.iter().zip(&r).zip(&n) {
                let _ = writeln!(tsv, "{mode}\t{lambda}\t{s}\t{r:.6}\t{n:.6}");
            }
            let _ = write!(table, "  {:>10.2}", mean(&r));
        }
        table.push('\n');
    }
    ctx.write("results.tsv", &report.to_records())?;
    ctx.write("lambda.tsv", &tsv)?;
    ctx.write("table.txt", &table)?;
    print!("{table}");
    Ok(())
}

// ---- dynamics ----

fn dynamics(ctx: &Ctx<'_>) -> CliResult<()> {
    let cfg = ctx.ws.cfg();
    let modes = cfg.mode_list()?;
    let every = cfg.experiment.dynamics_every;
    let scoring = cfg.scoring();
    let ids: Vec<String> = ctx.corpus.iter().map(|d| d.domain_id.clone()).collect();
    let per_seed = ctx.per_seed(|s| {
        let fts = ctx.finetuned(s)?;
        let settings = ctx.settings(s)?;
        let inputs = ctx.inputs(&ctx.all(), &fts);
        let probes = methods::probe_sets(&inputs, settings.probe_fraction, s, &scoring)?;
        let taus = methods::task_vectors(ctx.base, &inputs)?;
        let steps = settings.adaptive.steps;
        let mut logged: Vec<usize> = (0..=steps).step_by(every).collect();
        if logged.last() != Some(&steps) {
            logged.push(steps);
        }
        let mut traces: Vec<(String, Vec<DynamicsPoint>)> = Vec::new();
        let teachers: Vec<DynamicsPoint> = (0..inputs.len())
            .map(|d| dynamics_probe([(0, fts[d].clone())], &probes[d..d + 1], &scoring).map(|p| p[0]))
            .collect::<Result<_, _>>()?;
        let ce = teachers.iter().map(|p| p.cross_entropy).sum::<f64>() / teachers.len() as f64;
        let ent = teachers.iter().map(|p| p.entropy).sum::<f64>() / teachers.len() as f64;
        traces.push(("teachers".into(), vec![DynamicsPoint { step: 0, cross_entropy: ce, entropy: ent }]));
        for &mode in &modes {
            for m in [Method::AdaMerging(mode), Method::MergeRec(mode)] {
                let merged = ctx.merge(m, &inputs, &settings)?;
                trajectory(ctx, m, s, &merged, &ids)?;
                let a = merged.adaptive.as_ref().expect("adaptive method");
                let models = logged
                    .iter()
                    .map(|&st| Ok((st, merge(ctx.base, &taus, &a.weights_at(st))?)))
                    .collect::<CliResult<Vec<_>>>()?;
                traces.push((m.to_string(), dynamics_probe(models, &probes, &scoring)?));
            }
        }
        Ok(traces)
    })?;
    let mut tsv = String::from("method\tseed\tstep\tmetric\tvalue\n");
    for (s, traces) in ctx.seeds.iter().zip(&per_seed) {
        for (name, pts) in traces {
            for p in pts {
                let _ = writeln!(tsv, "{name}\t{s}\t{}\tprobe_cross_entropy\t{:.8}", p.step, p.cross_entropy);
                let _ = writeln!(tsv, "{name}\t{s}\t{}\tprobe_entropy\t{:.8}", p.step, p.entropy);
            }
        }
    }
    let mut table = format!(
        "[probe means over seeds; teachers = each fine-tuned model on its own domain]\n{:<24}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "method", "ce_start", "ce_end", "ent_start", "ent_end"
    );
    for (n, (name, _)) in per_seed[0].iter().enumerate() {
        let firsts: Vec<&DynamicsPoint> = per_seed.iter().map(|t| &t[n].1[0]).collect();
        let lasts: Vec<&DynamicsPoint> = per_seed.iter().map(|t| t[n].1.last().expect("nonempty trace")).collect();
        let avg =
            |v: &[&DynamicsPoint], f: fn(&DynamicsPoint) -> f64| mean(&v.iter().map(|p| f(p)).collect::<Vec<_>>());
        let _ = writeln!(
            table,
            "{name:<24}  {:>9.5}  {:>9.5}  {:>9.5}  {:>9.5}",
            avg(&firsts, |p| p.cross_entropy),
            avg(&lasts, |p| p.cross_entropy),
            avg(&firsts, |p| p.entropy),
            avg(&lasts, |p| p.entropy)
        );
    }
    ctx.write("dynamics.tsv", &tsv)?;
    ctx.write("table.txt", &table)?;
    print!("{table}");
    Ok(())
}
