use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;

use super::Catalog;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Sparse binary feature rows, `active` of `dim` coordinates set per item.
/// The row depends only on `(item_id, dim, active, seed)`.
pub fn featurize_items<T: Scalar>(item_ids: &[String], dim: usize, active: usize, seed: u64) -> Result<Vec<T>> {
    if active == 0 || active > dim {
        return Err(Error::invalid(format!(
            "feature activity must satisfy 0 < active <= dim, got active={active} dim={dim}"
        )));
    }
    let mut out = vec![T::zero(); item_ids.len() * dim];
    for (row, id) in out.chunks_mut(dim).zip(item_ids) {
        let mut r = rng::stream(seed, id);
        for j in index::sample(&mut r, dim, active) {
            row[j] = T::one();
        }
    }
    Ok(out)
}

/// Reads `item_id<TAB>f_0,f_1,...` rows into a catalog. All rows must share
/// one dimension; blank lines and lines starting with `#` are skipped.
pub fn read_feature_tsv<T: Scalar>(path: impl AsRef<Path>) -> Result<Catalog<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut feats = Vec::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Parse { path: path.to_path_buf(), line: n + 1, reason };
        let (id, values) = line.split_once('\t').ok_or_else(|| err("expected item_id<TAB>values".into()))?;
        let row = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map(T::lit).map_err(|_| err(format!("bad feature value {v:?}"))))
            .collect::<Result<Vec<T>>>()?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => return Err(err(format!("expected {d} features, got {}", row.len()))),
            _ => {}
        }
        ids.push(id.to_string());
        feats.extend(row);
    }
    Catalog::new(ids, feats, dim.unwrap_or(0))
}

/// Renders a catalog in the format read by [`read_feature_tsv`]. Values are
/// printed with the shortest representation that parses back exactly.
pub fn format_feature_tsv<T: Scalar>(catalog: &Catalog<T>) -> String {
    let mut out = String::new();
    for i in 0..catalog.len() {
        out.push_str(catalog.item_id(i));
        out.push('\t');
        for (j, v) in catalog.feature(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_tsv<T: Scalar>(catalog: &Catalog<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_feature_tsv(catalog)).map_err(|e| Error::io(path, e))
}
