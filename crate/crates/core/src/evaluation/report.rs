use std::fmt::Write as _;

use log::warn;

use super::stats;

/// `100 * value / reference`, undefined for a non-positive reference.
pub fn normalize(value: f64, reference: f64) -> Option<f64> {
    (reference > 0.0 && reference.is_finite()).then(|| 100.0 * value / reference)
}

/// Mean of the defined entries; `None` when nothing is defined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = values.len() - defined.len();
    if skipped > 0 {
        warn!("{skipped} undefined normalized value(s) excluded from an average");
    }
    (!defined.is_empty()).then(|| stats::mean(&defined))
}

/// Absolute and reference-normalized ranking metrics for one
/// `(method, domain, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub domain: String,
    pub seed: u64,
    pub recall: f64,
    pub ndcg: f64,
    pub norm_recall: Option<f64>,
    pub norm_ndcg: Option<f64>,
}

impl ReportRow {
    pub fn new(method: &str, domain: &str, seed: u64, (recall, ndcg): (f64, f64)) -> Self {
        Self {
            method: method.to_string(),
            domain: domain.to_string(),
            seed,
            recall,
            ndcg,
            norm_recall: None,
            norm_ndcg: None,
        }
    }

    /// Fills the normalized columns from the fine-tuned reference metrics.
    pub fn normalized_by(mut self, reference: Option<(f64, f64)>) -> Self {
        if let Some((r, n)) = reference {
            self.norm_recall = normalize(self.recall, r);
            self.norm_ndcg = normalize(self.ndcg, n);
        }
        self
    }
}

/// All rows of one study, with helpers for the aggregate views.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub k: usize,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Recall,
    Ndcg,
    NormRecall,
    NormNdcg,
}

impl Column {
    pub const ALL: [Column; 4] = [Column::Recall, Column::Ndcg, Column::NormRecall, Column::NormNdcg];

    pub fn name(self, k: usize) -> String {
        match self {
            Column::Recall => format!("recall@{k}"),
            Column::Ndcg => format!("ndcg@{k}"),
            Column::NormRecall => format!("norm_recall@{k}"),
            Column::NormNdcg => format!("norm_ndcg@{k}"),
        }
    }

    pub fn get(self, row: &ReportRow) -> Option<f64> {
        match self {
            Column::Recall => Some(row.recall),
            Column::Ndcg => Some(row.ndcg),
            Column::NormRecall => row.norm_recall,
            Column::NormNdcg => row.norm_ndcg,
        }
    }
}

impl MetricReport {
    pub fn new(k: usize) -> Self {
        Self { k, rows: Vec::new() }
    }

    /// Methods in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        first_seen(self.rows.iter().map(|r| r.method.as_str()))
    }

    pub fn domains(&self) -> Vec<String> {
        first_seen(self.rows.iter().map(|r| r.domain.as_str()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn cell(&self, method: &str, domain: &str, seed: u64, col: Column) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.domain == domain && r.seed == seed).and_then(|r| col.get(r))
    }

    /// Per-seed average over domains (mean of per-domain values).
    pub fn seed_averages(&self, method: &str, col: Column) -> Vec<f64> {
        let domains = self.domains();
        self.seeds()
            .into_iter()
            .filter_map(|s| {
                let vals: Vec<Option<f64>> = domains.iter().map(|d| self.cell(method, d, s, col)).collect();
                mean_defined(&vals)
            })
            .collect()
    }

    /// Seed mean of a per-domain column.
    pub fn domain_mean(&self, method: &str, domain: &str, col: Column) -> Option<f64> {
        let vals: Vec<f64> = self.seeds().into_iter().filter_map(|s| self.cell(method, domain, s, col)).collect();
        (!vals.is_empty()).then(|| stats::mean(&vals))
    }

    /// Seed mean and standard deviation of the domain average.
    pub fn average(&self, method: &str, col: Column) -> Option<(f64, f64)> {
        let v = self.seed_averages(method, col);
        (!v.is_empty()).then(|| (stats::mean(&v), stats::std_dev(&v)))
    }

    /// `domain<TAB>method<TAB>metric<TAB>seed<TAB>value`, one line per
    /// row and column; undefined values print as `NA`.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            for col in Column::ALL {
                let v = col.get(r).map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.domain, r.method, col.name(self.k), r.seed, v);
            }
        }
        out
    }

    /// Aligned table of seed-mean values of `col`, one row per method, with
    /// the domain average first.
    pub fn to_table(&self, col: Column) -> String {
        let domains = self.domains();
        let methods = self.methods();
        let width = methods.iter().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>8}", "method", "avg");
        for d in &domains {
            let _ = write!(out, "  {:>8}", truncate(d, 8));
        }
        out.push('\n');
        for m in &methods {
            let _ = write!(out, "{m:<width$}");
            let avg = self.average(m, col).map(|(v, _)| v);
            let _ = write!(out, "  {:>8}", fmt_cell(avg, col));
            for d in &domains {
                let _ = write!(out, "  {:>8}", fmt_cell(self.domain_mean(m, d, col), col));
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_cell(v: Option<f64>, col: Column) -> String {
    match (v, col) {
        (None, _) => "-".into(),
        (Some(v), Column::NormRecall | Column::NormNdcg) => format!("{v:.2}"),
        (Some(v), _) => format!("{v:.4}"),
    }
}

fn truncate(s: &str, n: usize) -> &str {
    s.char_indices().nth(n).map_or(s, |(i, _)| &s[..i])
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in it {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize(0.2, 0.2), Some(100.0));
        assert!((normalize(0.142, 0.1409).unwrap() - 100.78).abs() < 5e-3);
        assert_eq!(normalize(0.1, 0.0), None);
        assert_eq!(mean_defined(&[Some(90.0), None, Some(110.0)]), Some(100.0));
        assert_eq!(mean_defined(&[None]), None);
    }

    #[test]
    fn records_and_averages() {
        let mut rep = MetricReport::new(10);
        for seed in [1, 2] {
            for (d, r) in [("a", 0.2), ("b", 0.4)] {
                rep.rows.push(ReportRow::new("m", d, seed, (r, r / 2.0)).normalized_by(Some((r, r / 2.0))));
                rep.rows.push(ReportRow::new("x", d, seed, (r / 2.0, r / 4.0)).normalized_by(None));
            }
        }
        assert_eq!(rep.to_records().lines().count(), 2 * 2 * 2 * 4);
        assert_eq!(rep.average("m", Column::NormRecall), Some((100.0, 0.0)));
        assert_eq!(rep.average("x", Column::NormRecall), None);
        assert!((rep.average("x", Column::Recall).unwrap().0 - 0.15).abs() < 1e-12);
        let table = rep.to_table(Column::NormRecall);
        assert!(table.lines().nth(1).unwrap().contains("100.00"));
        assert!(rep.to_records().contains("a\tx\tnorm_recall@10\t1\tNA"));
    }
}
