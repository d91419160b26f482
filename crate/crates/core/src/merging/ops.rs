use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::recmodel::{Metadata, ParamSet, Role};
use crate::scalar::Scalar;

/// `finetuned - base`, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector<T> {
    pub domain_id: Option<String>,
    pub delta: ParamSet<T>,
    /// Rounding error of `delta`, so that `delta + residual` equals
    /// `finetuned - base` exactly. Merges add it back.
    pub residual: ParamSet<T>,
}

pub fn task_vector<T: Scalar>(finetuned: &ParamSet<T>, base: &ParamSet<T>) -> Result<TaskVector<T>> {
    base.check_compatible(finetuned, "task vector")?;
    let mut delta = finetuned.clone();
    let mut residual = finetuned.clone();
    for (((d, r), &f), &b) in delta.values_mut().zip(residual.values_mut()).zip(finetuned.values()).zip(base.values()) {
        // Knuth's two-sum of f and -b.
        let s = f - b;
        let f_part = s + b;
        let b_part = s - f_part;
        *d = s;
        *r = (f - f_part) + (-b - b_part);
    }
    Ok(TaskVector { domain_id: finetuned.meta.domain_id.clone(), delta, residual })
}

impl<T: Scalar> TaskVector<T> {
    pub fn num_layers(&self) -> usize {
        self.delta.num_layers()
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.delta.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMode {
    /// One coefficient per domain.
    #[default]
    DomainWise,
    /// One coefficient per (domain, layer).
    LayerWise,
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMode::DomainWise => "domainwise",
            MergeMode::LayerWise => "layerwise",
        })
    }
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "domainwise" | "domain-wise" | "domain_wise" => Ok(MergeMode::DomainWise),
            "layerwise" | "layer-wise" | "layer_wise" => Ok(MergeMode::LayerWise),
            other => Err(Error::invalid(format!("unknown merge mode {other:?} (expected domainwise or layerwise)"))),
        }
    }
}

/// Merging coefficients, stored domain-major: `values[k * L + l]` in
/// layer-wise mode, `values[k]` in domain-wise mode. Values are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeWeights<T> {
    pub mode: MergeMode,
    pub domains: usize,
    pub layers: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> MergeWeights<T> {
    pub fn uniform(mode: MergeMode, domains: usize, layers: usize, init: T) -> Self {
        let n = match mode {
            MergeMode::DomainWise => domains,
            MergeMode::LayerWise => domains * layers,
        };
        Self { mode, domains, layers, values: vec![init; n] }
    }

    pub fn domain_wise(values: Vec<T>) -> Self {
        Self { mode: MergeMode::DomainWise, domains: values.len(), layers: 0, values }
    }

    /// `rows[k][l]` is the weight of domain `k` on layer `l`.
    pub fn layer_wise(rows: &[Vec<T>]) -> Result<Self> {
        let layers = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != layers) {
            return Err(Error::shape("layer-wise weights need the same number of layers per domain"));
        }
        Ok(Self { mode: MergeMode::LayerWise, domains: rows.len(), layers, values: rows.concat() })
    }

    /// Coefficient of domain `k` on layer `l`.
    pub fn get(&self, k: usize, l: usize) -> T {
        match self.mode {
            MergeMode::DomainWise => self.values[k],
            MergeMode::LayerWise => self.values[k * self.layers + l],
        }
    }

    /// Human-readable name of coefficient `n`, e.g. `w[books]` or `w[books][2]`.
    pub fn label(&self, n: usize, domain_ids: &[String]) -> String {
        let name = |k: usize| domain_ids.get(k).cloned().unwrap_or_else(|| k.to_string());
        match self.mode {
            MergeMode::DomainWise => format!("w[{}]", name(n)),
            MergeMode::LayerWise => format!("w[{}][{}]", name(n / self.layers), n % self.layers),
        }
    }

    fn check(&self, taus: &[TaskVector<T>], base: &ParamSet<T>) -> Result<()> {
        if self.domains != taus.len() {
            return Err(Error::shape(format!("{} merge weights for {} task vectors", self.domains, taus.len())));
        }
        let expected = match self.mode {
            MergeMode::DomainWise => self.domains,
            MergeMode::LayerWise => {
                if self.layers != base.num_layers() {
                    return Err(Error::shape(format!(
                        "layer-wise weights cover {} layers, model has {}",
                        self.layers,
                        base.num_layers()
                    )));
                }
                self.domains * self.layers
            }
        };
        if self.values.len() != expected {
            return Err(Error::shape(format!("{} merge weights, expected {expected}", self.values.len())));
        }
        for (k, t) in taus.iter().enumerate() {
            base.check_compatible(&t.delta, &format!("task vector {k}"))?;
        }
        Ok(())
    }
}

fn merged_meta(base: &ParamSet<impl Scalar>, method: &str) -> Metadata {
    let mut meta = Metadata::new(Role::Merged, None, base.meta.seed);
    meta.notes.insert("method".into(), method.into());
    meta
}

/// `base + sum_k w_k^l tau_k^l` layer by layer, accumulated in `f64` and
/// rounded once. Zero coefficients are skipped, so all-zero weights
/// reproduce `base` bitwise, and one task vector at weight 1 reproduces its
/// fine-tuned model.
pub fn merge<T: Scalar>(base: &ParamSet<T>, taus: &[TaskVector<T>], w: &MergeWeights<T>) -> Result<ParamSet<T>> {
    w.check(taus, base)?;
    let mut out = base.clone().with_meta(merged_meta(base, &format!("{}", w.mode)));
    let mut acc = Vec::new();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        let active: Vec<(f64, &TaskVector<T>)> =
            taus.iter().enumerate().map(|(k, tau)| (w.get(k, l).as_f64(), tau)).filter(|(c, _)| *c != 0.0).collect();
        if active.is_empty() {
            continue;
        }
        acc.clear();
        acc.extend(layer.values().map(|v| v.as_f64()));
        for (c, tau) in active {
            let (d, r) = (&tau.delta.layers[l], &tau.residual.layers[l]);
            for ((a, dv), rv) in acc.iter_mut().zip(d.values()).zip(r.values()) {
                *a += c * (dv.as_f64() + rv.as_f64());
            }
        }
        for (v, a) in layer.values_mut().zip(&acc) {
            *v = T::from_f64(*a).unwrap_or_else(T::nan);
        }
    }
    Ok(out)
}

/// One coefficient per domain shared by every layer.
pub fn merge_domainwise<T: Scalar>(
    base: &ParamSet<T>,
    taus: &[TaskVector<T>],
    w: &MergeWeights<T>,
) -> Result<ParamSet<T>> {
    if w.mode != MergeMode::DomainWise {
        return Err(Error::invalid("merge_domainwise needs domain-wise weights"));
    }
    merge(base, taus, w)
}

pub fn merge_layerwise<T: Scalar>(
    base: &ParamSet<T>,
    taus: &[TaskVector<T>],
    w: &MergeWeights<T>,
) -> Result<ParamSet<T>> {
    if w.mode != MergeMode::LayerWise {
        return Err(Error::invalid("merge_layerwise needs layer-wise weights"));
    }
    merge(base, taus, w)
}

/// The same coefficient for every task vector.
pub fn task_arithmetic<T: Scalar>(base: &ParamSet<T>, taus: &[TaskVector<T>], w: T) -> Result<ParamSet<T>> {
    let mut out = merge(base, taus, &MergeWeights::uniform(MergeMode::DomainWise, taus.len(), 0, w))?;
    out.meta.notes.insert("method".into(), "task_arithmetic".into());
    Ok(out)
}

/// Coordinate-wise mean of the models.
pub fn weight_averaging<T: Scalar>(models: &[&ParamSet<T>]) -> Result<ParamSet<T>> {
    let first = models.first().ok_or_else(|| Error::invalid("weight averaging needs at least one model"))?;
    for (k, m) in models.iter().enumerate().skip(1) {
        first.check_compatible(m, &format!("model {k}"))?;
    }
    let inv = T::one() / T::from_usize_lossy(models.len());
    let mut out = first.zeros_like().with_meta(merged_meta(first, "average"));
    for (o, vals) in out.values_mut().zip(column_iter(models)) {
        *o = vals.into_iter().sum::<T>() * inv;
    }
    if models.len() == 1 {
        // Exact identity rather than x * 1.
        out.layers.clone_from(&first.layers);
    }
    Ok(out)
}

fn column_iter<'a, T: Scalar>(models: &'a [&'a ParamSet<T>]) -> impl Iterator<Item = Vec<T>> + 'a {
    let mut iters: Vec<_> = models.iter().map(|m| m.values()).collect();
    std::iter::from_fn(move || iters.iter_mut().map(|it| it.next().copied()).collect::<Option<Vec<T>>>())
}

/// Largest absolute gap between the raw average and `base + mean(tau)`.
/// Zero in exact arithmetic whenever every model was fine-tuned from `base`.
pub fn averaging_identity_gap<T: Scalar>(base: &ParamSet<T>, models: &[&ParamSet<T>]) -> Result<T> {
    let avg = weight_averaging(models)?;
    let taus = models.iter().map(|m| task_vector(m, base)).collect::<Result<Vec<_>>>()?;
    let inv = T::one() / T::from_usize_lossy(models.len());
    let via_tau = merge(base, &taus, &MergeWeights::uniform(MergeMode::DomainWise, taus.len(), 0, inv))?;
    Ok(avg.max_abs_diff(&via_tau))
}

/// Scope of the TIES magnitude trim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrimScope {
    /// Top coordinates over the whole flattened task vector.
    #[default]
    Global,
    /// Top coordinates within each layer separately.
    PerLayer,
}

/// Indices of the `ceil(density * n)` largest magnitudes, earlier index
/// first on equal magnitude.
fn top_fraction<T: Scalar>(values: &[T], density: f64) -> Vec<usize> {
    // The small slack keeps e.g. (2/3) * 3 from rounding up to 3.
    let keep = ((density * values.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b].abs().partial_cmp(&values[a].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    idx.truncate(keep.min(values.len()));
    idx
}

/// Trim each vector to its top-`density` magnitudes.
pub fn ties_trim<T: Scalar>(tau: &[T], density: f64, segments: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); tau.len()];
    let mut start = 0;
    for &len in segments {
        let seg = &tau[start..start + len];
        for i in top_fraction(seg, density) {
            out[start + i] = seg[i];
        }
        start += len;
    }
    out
}

/// Trim, elect and disjoint-merge flat task vectors into one merged delta.
///
/// Elected sign per coordinate is the sign of the sum of trimmed values,
/// positive when the sum is exactly zero; the merged value is the mean of
/// the trimmed values carrying the elected sign (0 when there are none).
pub fn ties_merged_delta<T: Scalar>(taus: &[Vec<T>], density: f64, segments: &[usize]) -> Result<Vec<T>> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid(format!("TIES density must lie in (0, 1], got {density}")));
    }
    let n = taus.first().ok_or_else(|| Error::invalid("TIES needs at least one task vector"))?.len();
    if taus.iter().any(|t| t.len() != n) || segments.iter().sum::<usize>() != n {
        return Err(Error::shape("TIES task vectors differ in length"));
    }
    let trimmed: Vec<Vec<T>> = taus.iter().map(|t| ties_trim(t, density, segments)).collect();
    let mut out = vec![T::zero(); n];
    for (j, o) in out.iter_mut().enumerate() {
        let sum: T = trimmed.iter().map(|t| t[j]).sum();
        let positive = sum >= T::zero();
        let (mut acc, mut count) = (T::zero(), 0usize);
        for t in &trimmed {
            let v = t[j];
            if v != T::zero() && (v > T::zero()) == positive {
                acc += v;
                count += 1;
            }
        }
        if count > 0 {
            *o = acc / T::from_usize_lossy(count);
        }
    }
    Ok(out)
}

/// `base + w * ties_delta`.
pub fn ties_merge<T: Scalar>(
    base: &ParamSet<T>,
    taus: &[TaskVector<T>],
    density: f64,
    w: T,
    scope: TrimScope,
) -> Result<ParamSet<T>> {
    for (k, t) in taus.iter().enumerate() {
        base.check_compatible(&t.delta, &format!("task vector {k}"))?;
    }
    let flat: Vec<Vec<T>> = taus.iter().map(|t| t.values().copied().collect()).collect();
    let segments: Vec<usize> = match scope {
        TrimScope::Global => vec![base.param_count()],
        TrimScope::PerLayer => base.layers.iter().map(|l| l.len()).collect(),
    };
    let delta = ties_merged_delta(&flat, density, &segments)?;
    let mut out = base.clone().with_meta(merged_meta(base, "ties"));
    for (o, d) in out.values_mut().zip(delta) {
        *o += w * d;
    }
    Ok(out)
}

/// Chain rule from `dL/dtheta_merge` to the merging coefficients:
/// `<g^l, tau_k^l>` per layer, summed over layers in domain-wise mode.
pub fn grad_wrt_weights<T: Scalar>(grad: &ParamSet<T>, taus: &[TaskVector<T>], mode: MergeMode) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (k, tau) in taus.iter().enumerate() {
        grad.check_compatible(&tau.delta, &format!("task vector {k}"))?;
        let per_layer = grad.layers.iter().zip(&tau.delta.layers).map(|(g, t)| g.inner(t));
        match mode {
            MergeMode::DomainWise => out.push(per_layer.sum()),
            MergeMode::LayerWise => out.extend(per_layer),
        }
    }
    Ok(out)
}
