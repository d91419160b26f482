use crate::corpus::Catalog;
use crate::error::{Error, Result};
use crate::recmodel::{score, Diagnostics, ParamSet, Scoring};
use crate::scalar::Scalar;

/// Held-out pseudo-users of one domain with their teacher's top-1 labels.
#[derive(Debug, Clone)]
pub struct ProbeSet<'a, T> {
    pub catalog: &'a Catalog<T>,
    /// Catalog index behind each probe pseudo-user.
    pub items: Vec<usize>,
    /// Teacher top-1 catalog index for each probe pseudo-user.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsPoint {
    pub step: usize,
    pub cross_entropy: f64,
    pub entropy: f64,
}

/// Mean cross-entropy against the teacher labels and mean prediction entropy
/// on the probe sets, for each `(step, model)` in the stream. Per-domain
/// means are averaged over domains.
pub fn dynamics_probe<T: Scalar>(
    models: impl IntoIterator<Item = (usize, ParamSet<T>)>,
    probes: &[ProbeSet<'_, T>],
    scoring: &Scoring<T>,
) -> Result<Vec<DynamicsPoint>> {
    if probes.iter().any(|p| p.items.is_empty() || p.items.len() != p.labels.len()) {
        return Err(Error::invalid("every probe set needs at least one labeled pseudo-user"));
    }
    let mut diag = Diagnostics::default();
    let mut out = Vec::new();
    for (step, model) in models {
        let (mut ce, mut ent) = (0.0, 0.0);
        for p in probes {
            let (mut c, mut e) = (0.0, 0.0);
            for (&i, &label) in p.items.iter().zip(&p.labels) {
                let d = score(&model, std::slice::from_ref(&i), p.catalog, scoring, &mut diag)?;
                c -= d.log_probs[label].as_f64();
                e += d.entropy().as_f64();
            }
            let n = p.items.len() as f64;
            ce += c / n;
            ent += e / n;
        }
        let k = probes.len().max(1) as f64;
        out.push(DynamicsPoint { step, cross_entropy: ce / k, entropy: ent / k });
    }
    Ok(out)
}

/// `step<TAB>name<TAB>value` lines for a trace.
pub fn dynamics_log(points: &[DynamicsPoint]) -> String {
    let mut out = String::new();
    for p in points {
        out.push_str(&format!("{}\tprobe_cross_entropy\t{:.8}\n", p.step, p.cross_entropy));
        out.push_str(&format!("{}\tprobe_entropy\t{:.8}\n", p.step, p.entropy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recmodel::ModelDims;

    #[test]
    fn deterministic_trace() {
        let dims = ModelDims { input: 12, hidden: 6, output: 4, layers: 3 };
        let cat = Catalog::<f64>::hashed((0..9).map(|i| format!("p{i}")).collect(), 12, 3, 1).unwrap();
        let probe = ProbeSet { catalog: &cat, items: vec![0, 4, 8], labels: vec![0, 4, 8] };
        let stream = || (0..3).map(|s| (s * 10, ParamSet::random(&dims, s as u64).unwrap()));
        let a = dynamics_probe(stream(), std::slice::from_ref(&probe), &Scoring::default()).unwrap();
        let b = dynamics_probe(stream(), std::slice::from_ref(&probe), &Scoring::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|p| p.step).collect::<Vec<_>>(), vec![0, 10, 20]);
        // Uniform-ish softmax over 9 items at T=1: entropy close to ln 9.
        assert!(a.iter().all(|p| p.entropy > 0.0 && p.entropy <= 9f64.ln() + 1e-12));
        assert_eq!(dynamics_log(&a).lines().count(), 6);
        let empty = ProbeSet { catalog: &cat, items: vec![], labels: vec![] };
        assert!(dynamics_probe(stream(), &[empty], &Scoring::default()).is_err());
    }
}
